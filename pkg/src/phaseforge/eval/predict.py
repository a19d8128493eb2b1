"""Online phase prediction."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..nn.layers import LstmState, affine, encoder_forward, lstm_step, sigmoid, softmax
from ..nn.model import forward_subsequence
from ..nn.params import ENDON2N_UPDATED, ENDON2N_VANILLA, RSD_PROGRESS
from ..synth import elapsed_feature


@dataclass
class PredictionTrace:
    video_id: str
    probs: np.ndarray    # (T, M), rows sum to 1
    labels: np.ndarray   # (T,), 1-based argmax of probs

    def truncated(self, k):
        return PredictionTrace(self.video_id, self.probs[:k], self.labels[:k])


def _check(params, record):
    if params.spec.variant not in (ENDON2N_VANILLA, ENDON2N_UPDATED):
        raise ValueError(f"cannot predict phases with a {params.spec.variant} model")
    if record.feature_dim != params.spec.input_dim:
        raise ValueError(f"record has {record.feature_dim}-dim frames, model expects {params.spec.input_dim}")


def predict_sequence(params, record) -> PredictionTrace:
    """Frame-by-frame causal prediction.

    Each frame is pushed through the network on its own, so the output at
    frame t is computed identically whatever follows it (bitwise prefix
    invariance).
    """
    _check(params, record)
    spec = params.spec
    T = record.num_frames
    elapsed = elapsed_feature(record, spec.s_norm) if spec.uses_time_inputs else None
    state = LstmState.zeros(spec.lstm_hidden)
    probs = np.empty((T, spec.num_phases))
    for t in range(T):
        feats, _ = encoder_forward(params, record.frames[t])
        if elapsed is not None:
            prog = sigmoid(affine(params, "fcp_prog", feats)[0])
            x = np.concatenate([feats, [elapsed[t], prog]])
        else:
            x = feats
        h, state, _ = lstm_step(params, x, state)
        probs[t] = softmax(affine(params, "fc_phase", h))
    return PredictionTrace(record.video_id, probs, np.argmax(probs, axis=1) + 1)


def predict_labels_fast(params, record) -> np.ndarray:
    """Batched forward pass (same model, vectorized encoder); used for validation."""
    _check(params, record)
    elapsed = elapsed_feature(record, params.spec.s_norm) if params.spec.uses_time_inputs else None
    outputs, _, _ = forward_subsequence(params, frames=record.frames, elapsed=elapsed)
    return np.argmax(outputs["phase"], axis=1) + 1


def predict_rsd(params, record) -> np.ndarray:
    """Remaining-duration predictions in minutes (de-normalized by s_norm)."""
    if params.spec.variant != RSD_PROGRESS:
        raise ValueError("predict_rsd needs an rsd-progress model")
    elapsed = elapsed_feature(record, params.spec.s_norm)
    outputs, _, _ = forward_subsequence(params, frames=record.frames, elapsed=elapsed)
    return outputs["rsd"] * params.spec.s_norm
