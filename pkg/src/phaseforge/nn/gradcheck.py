"""Central finite-difference gradients, the oracle for every analytic backward pass."""

import numpy as np


def finite_diff_grads(loss_fn, params, epsilon=1e-6, names=None, order=2):
    """d loss_fn(params) / d params by central differences, one scalar at a time.

    ``order=2`` is the usual (f(x+e) - f(x-e)) / 2e stencil; ``order=4`` the
    five-point central stencil, whose O(e^4) truncation error lets a larger
    step keep round-off small. ``epsilon`` may be a dict of per-tensor steps
    (missing names use ``epsilon["default"]``). ``loss_fn`` must be deterministic. Arrays are
    perturbed in place and restored, so ``params`` is unchanged on return.
    """
    if order not in (2, 4):
        raise ValueError("order must be 2 or 4")
    grads = {}
    for name in (params.names() if names is None else names):
        arr = params.arrays[name]
        eps = epsilon.get(name, epsilon["default"]) if isinstance(epsilon, dict) else epsilon
        g = np.zeros_like(arr)
        flat = arr.reshape(-1)
        gflat = g.reshape(-1)
        for i in range(flat.size):
            gflat[i] = _central(loss_fn, params, flat, i, eps, order)
        grads[name] = g
    return grads


def _central(loss_fn, params, flat, i, eps, order):
    orig = flat[i]

    def at(x):
        flat[i] = x
        return loss_fn(params)

    try:
        if order == 2:
            return (at(orig + eps) - at(orig - eps)) / (2.0 * eps)
        # paired differences: bit-identical losses give exactly zero
        near = at(orig + eps) - at(orig - eps)
        far = at(orig + 2 * eps) - at(orig - 2 * eps)
        return (8.0 * near - far) / (12.0 * eps)
    finally:
        flat[i] = orig


def max_relative_error(analytic, numeric, floor=1e-8):
    """max over all elements of |a - n| / max(|a|, |n|, floor)."""
    worst = 0.0
    for name, n in numeric.items():
        a = analytic.get(name, np.zeros_like(n))
        denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)
        worst = max(worst, float(np.max(np.abs(a - n) / denom)))
    return worst


def kink_margin(params, frames, elapsed=None, y_rsd=None, y_prog=None) -> float:
    """Distance of a sequence-model evaluation point from the nearest kink.

    Kinks are ReLU pre-activations at 0 and smooth-L1 residuals at |x| = 1.
    Finite differences are only a valid oracle when the stencil stays on one
    side of every kink, so callers reject points whose margin is too small.
    """
    from .layers import sigmoid
    from .model import forward_subsequence

    outputs, _, trace = forward_subsequence(params, frames=frames, elapsed=elapsed)
    dist = [float(np.min(np.abs(pre))) for _, pre in trace["enc"]]
    if "rsd" in outputs and y_rsd is not None:
        dist.append(float(np.min(np.abs(np.abs(outputs["rsd"] - y_rsd) - 1.0))))
        dist.append(float(np.min(np.abs(np.abs(sigmoid(outputs["prog"]) - y_prog) - 1.0))))
    return min(dist)
