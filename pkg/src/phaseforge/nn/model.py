"""Whole-network forward/backward passes and the training objectives."""

from __future__ import annotations

import numpy as np

from .layers import (
    LstmState, affine, affine_backward, encoder_backward, encoder_forward, log_softmax,
    lstm_backward, lstm_forward, sigmoid, smooth_l1, softmax,
)
from .params import (
    ENDON2N_UPDATED, ENDON2N_VANILLA, PHASE_ENCODER, PROGRESS_ENCODER, RSD_PROGRESS, TEMPCON,
)


# --- losses -----------------------------------------------------------------

def _effective_count(mask):
    n = float(np.sum(mask))
    if n <= 0:
        raise ValueError("no unmasked frames (T_eff = 0)")
    return n


def phase_loss_grad(logits, labels, mask, normalizer):
    """Masked multinomial logistic loss summed over frames / ``normalizer``.

    ``labels`` are 1-based phase ids (anything on masked frames).
    Returns (loss, d_logits).
    """
    logits = np.asarray(logits, dtype=np.float64)
    labels = np.asarray(labels)
    mask = np.asarray(mask, dtype=np.float64)
    idx = np.where(mask > 0, labels - 1, 0)
    M = logits.shape[1]
    if np.any((mask > 0) & ((labels < 1) | (labels > M))):
        raise ValueError(f"phase labels must lie in 1..{M}")
    logp = log_softmax(logits)
    rows = np.arange(logits.shape[0])
    picked = logp[rows, idx]
    loss = -np.sum(mask * picked) / normalizer
    d = softmax(logits)
    d[rows, idx] -= 1.0
    d *= (mask / normalizer)[:, None]
    return loss, d


def phase_sequence_loss(logits, labels, mask=None):
    """Mean negative log-likelihood of the true phase over unmasked frames."""
    logits = np.asarray(logits, dtype=np.float64)
    if mask is None:
        mask = np.ones(logits.shape[0])
    if len(labels) != logits.shape[0] or len(mask) != logits.shape[0]:
        raise ValueError("logits, labels and mask must have equal lengths")
    return phase_loss_grad(logits, labels, mask, _effective_count(mask))[0]


def rsd_progress_loss_grad(z_rsd, z_prog, y_rsd, y_prog, mask, normalizer):
    """Smooth-L1 on the RSD residual plus smooth-L1 on the sigmoid progress residual.

    Returns (loss, d_z_rsd, d_z_prog).
    """
    mask = np.asarray(mask, dtype=np.float64)
    y_rsd = np.where(mask > 0, y_rsd, 0.0)
    y_prog = np.where(mask > 0, y_prog, 0.0)
    v_r, d_r = smooth_l1(np.asarray(z_rsd) - y_rsd)
    p = sigmoid(z_prog)
    v_p, d_p = smooth_l1(p - y_prog)
    w = mask / normalizer
    loss = float(np.sum(w * (v_r + v_p)))
    return loss, w * d_r, w * d_p * p * (1.0 - p)


def rsd_progress_loss(z_rsd, z_prog, y_rsd, y_prog, mask=None):
    z_rsd = np.atleast_1d(np.asarray(z_rsd, dtype=np.float64))
    if mask is None:
        mask = np.ones(z_rsd.shape[0])
    n = z_rsd.shape[0]
    if not (len(z_prog) == len(y_rsd) == len(y_prog) == len(mask) == n):
        raise ValueError("all sequences must have equal lengths")
    return rsd_progress_loss_grad(z_rsd, np.asarray(z_prog, dtype=np.float64), np.asarray(y_rsd),
                                  np.asarray(y_prog), mask, _effective_count(mask))[0]


# --- sequence models (EndoN2N vanilla/updated, RSD-progress) ---------------

def forward_subsequence(params, frames=None, elapsed=None, state=None, features=None):
    """Forward one (sub)sequence.

    Either raw ``frames`` (L, D) or precomputed encoder ``features`` (L, F)
    must be given; ``elapsed`` (L,) is required for the time-input variants.
    Returns (outputs, final_state, trace); outputs holds ``phase`` logits
    (L, M) or ``rsd``/``prog`` pre-activations (L,).
    """
    spec = params.spec
    if spec.variant not in (ENDON2N_VANILLA, ENDON2N_UPDATED, RSD_PROGRESS):
        raise ValueError(f"{spec.variant} is not a sequence model")
    if state is None:
        state = LstmState.zeros(spec.lstm_hidden)
    trace = {"enc": None}
    if features is None:
        feats, trace["enc"] = encoder_forward(params, frames)
    else:
        feats = np.asarray(features, dtype=np.float64)
    trace["feats"] = feats
    if spec.uses_time_inputs:
        if elapsed is None:
            raise ValueError(f"{spec.variant} needs the elapsed-time input")
        prog_in = sigmoid(affine(params, "fcp_prog", feats)[:, 0])
        trace["prog_in"] = prog_in
        lstm_in = np.concatenate([feats, np.asarray(elapsed, dtype=np.float64)[:, None],
                                  prog_in[:, None]], axis=1)
    else:
        if elapsed is not None:
            raise TypeError(f"{spec.variant} takes no elapsed-time input")
        lstm_in = feats
    hs, state_out, trace["lstm"] = lstm_forward(params, lstm_in, state)
    if spec.variant == RSD_PROGRESS:
        outputs = {"rsd": affine(params, "fc_rsd", hs)[:, 0],
                   "prog": affine(params, "fc_prog", hs)[:, 0]}
    else:
        outputs = {"phase": affine(params, "fc_phase", hs)}
    return outputs, state_out, trace


def backward_subsequence(params, trace, head_grads, dstate=None, encoder=True):
    """Exact reverse pass for one (sub)sequence.

    ``head_grads`` maps output names to d(loss)/d(output). ``dstate`` is the
    (dh, dc) gradient arriving from after the last step; ``None`` means zero,
    the end-of-sequence boundary condition and the truncation rule at
    subsequence boundaries alike. Returns (grads, (dh_in, dc_in)) where the
    pair is the gradient on the state that entered the subsequence.
    Encoder gradients are skipped when ``encoder`` is false.
    """
    spec = params.spec
    H = spec.lstm_hidden
    hs = trace["lstm"]["hs"]
    grads = {}
    d_hs = np.zeros_like(hs)
    if spec.variant == RSD_PROGRESS:
        d_hs += affine_backward(params, "fc_rsd", hs, head_grads["rsd"][:, None], grads)
        d_hs += affine_backward(params, "fc_prog", hs, head_grads["prog"][:, None], grads)
    else:
        d_hs += affine_backward(params, "fc_phase", hs, head_grads["phase"], grads)
    dh_next, dc_next = (np.zeros(H), np.zeros(H)) if dstate is None else dstate
    d_in, dh0, dc0 = lstm_backward(params, trace["lstm"], d_hs, dh_next, dc_next, grads)
    F = spec.feature_dim
    d_feats = d_in[:, :F]
    if spec.uses_time_inputs:
        p = trace["prog_in"]
        dz = (d_in[:, F + 1] * p * (1.0 - p))[:, None]
        d_feats = d_feats + affine_backward(params, "fcp_prog", trace["feats"], dz, grads)
    if encoder and trace["enc"] is not None:
        encoder_backward(params, trace["enc"], d_feats, grads)
    return grads, (dh0, dc0)


# --- frame models -----------------------------------------------------------

def frame_forward(params, X):
    """Per-frame output of the phase or progress encoder models.

    Phase encoder: logits (N, M). Progress encoder: pre-sigmoid (N,).
    """
    feats, enc = encoder_forward(params, X)
    if params.spec.variant == PHASE_ENCODER:
        out = affine(params, "fcp_phase", feats)
    elif params.spec.variant == PROGRESS_ENCODER:
        out = affine(params, "fcp_prog", feats)[:, 0]
    else:
        raise ValueError(f"{params.spec.variant} is not a frame model")
    return out, (feats, enc)


def frame_backward(params, trace, d_out):
    feats, enc = trace
    grads = {}
    if params.spec.variant == PHASE_ENCODER:
        d_feats = affine_backward(params, "fcp_phase", feats, d_out, grads)
    else:
        d_feats = affine_backward(params, "fcp_prog", feats, d_out[:, None], grads)
    encoder_backward(params, enc, d_feats, grads)
    return grads


def frame_phase_loss_grad(params, X, labels):
    logits, trace = frame_forward(params, X)
    n = X.shape[0]
    loss, d = phase_loss_grad(logits, labels, np.ones(n), float(n))
    return loss, frame_backward(params, trace, d)


def frame_progress_loss_grad(params, X, targets):
    z, trace = frame_forward(params, X)
    n = X.shape[0]
    p = sigmoid(z)
    v, d = smooth_l1(p - targets)
    loss = float(np.mean(v))
    return loss, frame_backward(params, trace, d * p * (1.0 - p) / n)


# --- siamese temporal-order model ------------------------------------------

def tempcon_forward(params, frame_a, frame_b):
    """Shared-encoder two-stream order classifier. Inputs (N, D) or (D,)."""
    if params.spec.variant != TEMPCON:
        raise ValueError("tempcon_forward needs a tempcon parameter store")
    a = np.asarray(frame_a, dtype=np.float64)
    b = np.asarray(frame_b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError("frame_a and frame_b must have the same shape")
    fa, enc_a = encoder_forward(params, a)
    fb, enc_b = encoder_forward(params, b)
    joint = np.concatenate([fa, fb], axis=-1)
    return affine(params, "fc_order", joint), (joint, enc_a, enc_b)


def tempcon_backward(params, trace, d_logits):
    joint, enc_a, enc_b = trace
    grads = {}
    d_joint = affine_backward(params, "fc_order", joint, d_logits, grads)
    F = params.spec.feature_dim
    encoder_backward(params, enc_a, d_joint[..., :F], grads)
    encoder_backward(params, enc_b, d_joint[..., F:], grads)
    return grads


def tempcon_loss_grad(params, A, B, labels):
    """``labels`` are 0/1 order classes; returns mean CE loss and grads."""
    logits, trace = tempcon_forward(params, A, B)
    n = A.shape[0]
    loss, d = phase_loss_grad(logits, np.asarray(labels) + 1, np.ones(n), float(n))
    return loss, tempcon_backward(params, trace, d)
