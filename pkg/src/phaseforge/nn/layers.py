"""Layer primitives with hand-derived backward passes (float64, numpy)."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


def sigmoid(z):
    # tanh form never overflows and saturates to exactly 0 / 1
    return 0.5 * (1.0 + np.tanh(0.5 * np.asarray(z, dtype=np.float64)))


def softmax(z, axis=-1):
    z = np.asarray(z, dtype=np.float64)
    e = np.exp(z - np.max(z, axis=axis, keepdims=True))
    return e / np.sum(e, axis=axis, keepdims=True)


def log_softmax(z, axis=-1):
    z = np.asarray(z, dtype=np.float64)
    shifted = z - np.max(z, axis=axis, keepdims=True)
    return shifted - np.log(np.sum(np.exp(shifted), axis=axis, keepdims=True))


def smooth_l1(x):
    """Smooth L1 value and derivative: 0.5 x^2 inside |x| < 1, |x| - 0.5 outside."""
    x = np.asarray(x, dtype=np.float64)
    inside = np.abs(x) < 1.0
    value = np.where(inside, 0.5 * x * x, np.abs(x) - 0.5)
    deriv = np.where(inside, x, np.sign(x))
    if value.ndim == 0:
        return float(value), float(deriv)
    return value, deriv


# --- encoder ----------------------------------------------------------------

def encoder_forward(params, x):
    """ReLU MLP over the last axis of ``x``. Returns (features, trace)."""
    x = np.asarray(x, dtype=np.float64)
    D = params.spec.input_dim
    if x.shape[-1] != D:
        raise ValueError(f"encoder expects input dim {D}, got {x.shape[-1]}")
    trace = []
    a = x
    for k in range(len(params.spec.encoder_widths)):
        W, b = params[f"enc.W{k}"], params[f"enc.b{k}"]
        pre = a @ W.T + b
        trace.append((a, pre))
        a = np.maximum(pre, 0.0)
    return a, trace


def encoder_backward(params, trace, d_features, grads=None, need_input_grad=False):
    """Accumulate encoder gradients into ``grads``; optionally return d(input)."""
    grads = {} if grads is None else grads
    d = d_features
    for k in range(len(trace) - 1, -1, -1):
        a, pre = trace[k]
        d = d * (pre > 0)
        d2 = d.reshape(-1, d.shape[-1])
        a2 = a.reshape(-1, a.shape[-1])
        _acc(grads, f"enc.W{k}", d2.T @ a2)
        _acc(grads, f"enc.b{k}", d2.sum(axis=0))
        if k > 0 or need_input_grad:
            d = d @ params[f"enc.W{k}"]
    return grads, (d if need_input_grad else None)


def _acc(grads, name, value):
    if name in grads:
        grads[name] += value
    else:
        grads[name] = value


# --- affine heads -----------------------------------------------------------

def affine(params, layer, x):
    return x @ params[f"{layer}.W"].T + params[f"{layer}.b"]


def affine_backward(params, layer, x, dy, grads):
    dy2 = dy.reshape(-1, dy.shape[-1])
    x2 = x.reshape(-1, x.shape[-1])
    _acc(grads, f"{layer}.W", dy2.T @ x2)
    _acc(grads, f"{layer}.b", dy2.sum(axis=0))
    return dy @ params[f"{layer}.W"]


def phase_head(params, h, layer="fc_phase"):
    """Phase logits; pair with :func:`softmax` for probabilities."""
    return affine(params, layer, h)


def progress_head(params, features, layer="fcp_prog"):
    """Sigmoid progress estimate in (0, 1), squeezed to the batch shape."""
    return sigmoid(affine(params, layer, features)[..., 0])


def rsd_head(params, h):
    return affine(params, "fc_rsd", h)[..., 0]


# --- LSTM -------------------------------------------------------------------

@dataclass
class LstmState:
    h: np.ndarray
    c: np.ndarray

    @classmethod
    def zeros(cls, hidden: int) -> "LstmState":
        return cls(np.zeros(hidden), np.zeros(hidden))

    def copy(self) -> "LstmState":
        return LstmState(self.h.copy(), self.c.copy())


def lstm_step(params, x_t, state: LstmState):
    """One non-peephole LSTM step with gate blocks ordered [i, f, o, g]."""
    Wx, Wh, b = params["lstm.Wx"], params["lstm.Wh"], params["lstm.b"]
    x_t = np.asarray(x_t, dtype=np.float64)
    if x_t.shape != (Wx.shape[1],):
        raise ValueError(f"LSTM expects input dim {Wx.shape[1]}, got {x_t.shape}")
    H = Wh.shape[1]
    z = Wx @ x_t + Wh @ state.h + b
    s = sigmoid(z[:3 * H])
    g = np.tanh(z[3 * H:])
    i, f, o = s[:H], s[H:2 * H], s[2 * H:]
    c = f * state.c + i * g
    h = o * np.tanh(c)
    trace = {"x": x_t, "h_prev": state.h, "c_prev": state.c, "i": i, "f": f, "o": o, "g": g, "c": c}
    return h, LstmState(h, c), trace


def lstm_forward(params, X, state: LstmState):
    """Run the LSTM over rows of ``X`` (L, I). Returns (H_seq, final state, trace)."""
    Wx, Wh, b = params["lstm.Wx"], params["lstm.Wh"], params["lstm.b"]
    if X.shape[1] != Wx.shape[1]:
        raise ValueError(f"LSTM expects input dim {Wx.shape[1]}, got {X.shape[1]}")
    L = X.shape[0]
    H = Wh.shape[1]
    XG = X @ Wx.T + b
    gates = np.empty((L, 4 * H))
    cells = np.empty((L, H))
    hs = np.empty((L, H))
    h, c = state.h, state.c
    for t in range(L):
        z = XG[t] + Wh @ h
        s = sigmoid(z[:3 * H])
        g = np.tanh(z[3 * H:])
        c = s[H:2 * H] * c + s[:H] * g
        h = s[2 * H:] * np.tanh(c)
        gates[t, :3 * H] = s
        gates[t, 3 * H:] = g
        cells[t] = c
        hs[t] = h
    trace = {"X": X, "gates": gates, "cells": cells, "hs": hs, "h0": state.h, "c0": state.c}
    return hs, LstmState(h.copy(), c.copy()), trace


def lstm_backward(params, trace, d_hs, dh_next, dc_next, grads):
    """Reverse pass through one LSTM unroll.

    ``dh_next``/``dc_next`` is the gradient arriving from beyond the last
    step; zeros give the plain end-of-sequence boundary. Returns
    (d_inputs, dh_in, dc_in) where the last two flow into the state that
    entered the unroll.
    """
    Wx, Wh = params["lstm.Wx"], params["lstm.Wh"]
    gates, cells, hs = trace["gates"], trace["cells"], trace["hs"]
    L, H = cells.shape
    d_gates = np.empty((L, 4 * H))
    dh = np.asarray(dh_next, dtype=np.float64)
    dc = np.asarray(dc_next, dtype=np.float64)
    for t in range(L - 1, -1, -1):
        dh = dh + d_hs[t]
        i = gates[t, :H]
        f = gates[t, H:2 * H]
        o = gates[t, 2 * H:3 * H]
        g = gates[t, 3 * H:]
        tc = np.tanh(cells[t])
        c_prev = cells[t - 1] if t > 0 else trace["c0"]
        dc = dc + dh * o * (1.0 - tc * tc)
        d_gates[t, :H] = dc * g * i * (1.0 - i)
        d_gates[t, H:2 * H] = dc * c_prev * f * (1.0 - f)
        d_gates[t, 2 * H:3 * H] = dh * tc * o * (1.0 - o)
        d_gates[t, 3 * H:] = dc * i * (1.0 - g * g)
        dc = dc * f
        dh = Wh.T @ d_gates[t]
    h_prev = np.vstack([trace["h0"][None, :], hs[:-1]])
    _acc(grads, "lstm.Wx", d_gates.T @ trace["X"])
    _acc(grads, "lstm.Wh", d_gates.T @ h_prev)
    _acc(grads, "lstm.b", d_gates.sum(axis=0))
    d_inputs = d_gates @ Wx
    return d_inputs, dh, dc
