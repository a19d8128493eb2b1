"""SGD (Caffe momentum convention) and Adam, with step decay, L2, per-layer rates and frozen sets."""

from __future__ import annotations

import numpy as np

from ..nn.params import layer_of


class GradAccumulator:
    """Gradient buffer summed over the forward passes of one effective batch."""

    def __init__(self, params, max_passes: int | None = None):
        self.buffer = params.zeros_like()
        self.passes = 0
        self.max_passes = max_passes

    def add(self, grads: dict) -> None:
        if self.max_passes is not None and self.passes >= self.max_passes:
            raise RuntimeError(f"more than {self.max_passes} passes accumulated")
        for name, g in grads.items():
            self.buffer[name] += g
        self.passes += 1

    def reset(self) -> None:
        for g in self.buffer.values():
            g[...] = 0.0
        self.passes = 0


def lr_multipliers(params, random_mult: float = 10.0) -> dict:
    """Freshly initialized parameters learn ``random_mult`` times faster."""
    return {name: (random_mult if name in params.random_init else 1.0) for name in params.arrays}


def _check(params, grads, frozen):
    unknown = set(frozen) - set(params.arrays)
    if unknown:
        raise ValueError(f"frozen names not in store: {sorted(unknown)}")
    for name, g in grads.items():
        if name not in params.arrays:
            raise ValueError(f"gradient for unknown parameter {name!r}")
        if g.shape != params.arrays[name].shape:
            raise ValueError(f"{name}: gradient shape {g.shape} != {params.arrays[name].shape}")


class SGD:
    """Caffe momentum: ``v <- m v - lr (g + lambda w);  w <- w + v``."""

    def __init__(self, cfg, step_size=None):
        self.cfg = cfg
        self.step_size = cfg.step_size if step_size is None else step_size
        self.velocity = {}

    def update(self, params, grads, iteration, frozen=frozenset(), multipliers=None):
        _check(params, grads, frozen)
        lr = self.cfg.lr(iteration, self.step_size)
        for name, w in params.arrays.items():
            if name in frozen or name not in grads:
                continue
            mult = 1.0 if multipliers is None else multipliers.get(name, 1.0)
            g = grads[name] + self.cfg.weight_decay * w
            v = self.velocity.get(name)
            if v is None:
                v = self.velocity[name] = np.zeros_like(w)
            v *= self.cfg.momentum
            v -= (lr * mult) * g
            w += v
        return params


class Adam:
    """Bias-corrected Adam; L2 joins the gradient before the moment updates.

    Moment buffers persist across learning-rate decay steps.
    """

    def __init__(self, cfg, step_size=None):
        self.cfg = cfg
        self.step_size = cfg.step_size if step_size is None else step_size
        self.m, self.v, self.t = {}, {}, {}

    def update(self, params, grads, iteration, frozen=frozenset(), multipliers=None):
        _check(params, grads, frozen)
        c = self.cfg
        lr = c.lr(iteration, self.step_size)
        for name, w in params.arrays.items():
            if name in frozen or name not in grads:
                continue
            mult = 1.0 if multipliers is None else multipliers.get(name, 1.0)
            g = grads[name] + c.weight_decay * w
            if name not in self.m:
                self.m[name] = np.zeros_like(w)
                self.v[name] = np.zeros_like(w)
                self.t[name] = 0
            self.t[name] += 1
            k = self.t[name]
            m, v = self.m[name], self.v[name]
            m *= c.beta1
            m += (1.0 - c.beta1) * g
            v *= c.beta2
            v += (1.0 - c.beta2) * g * g
            m_hat = m / (1.0 - c.beta1 ** k)
            v_hat = v / (1.0 - c.beta2 ** k)
            w -= (lr * mult) * m_hat / (np.sqrt(v_hat) + c.eps)
        return params


def make_optimizer(cfg, step_size=None):
    return (Adam if cfg.optimizer == "adam" else SGD)(cfg, step_size)


def sgd_update(params, grads, cfg, iteration, frozen=frozenset(), multipliers=None, state=None):
    """One SGD step; pass the same ``state`` (an :class:`SGD`) to keep momentum."""
    opt = state if state is not None else SGD(cfg)
    return opt.update(params, grads, iteration, frozen, multipliers)


def adam_update(params, grads, cfg, iteration, frozen=frozenset(), multipliers=None, state=None):
    opt = state if state is not None else Adam(cfg)
    return opt.update(params, grads, iteration, frozen, multipliers)


def frozen_layers(params, layers) -> frozenset:
    return frozenset(n for n in params.arrays if layer_of(n) in layers)
