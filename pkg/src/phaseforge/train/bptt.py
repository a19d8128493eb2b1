"""Exact BPTT and truncated BPTT with forwarded LSTM state.

The truncated variant splits a video into consecutive subsequences. The
forward pass carries (h, c) across every boundary, so the loss is exactly
the whole-video loss; the backward pass starts each subsequence from a zero
state gradient, so no gradient crosses a boundary. Subsequence gradients are
summed into one accumulator and applied as a single update per video.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..nn.layers import LstmState
from ..nn.model import (
    backward_subsequence, forward_subsequence, phase_loss_grad, rsd_progress_loss_grad,
)
from ..nn.params import RSD_PROGRESS
from ..synth import derive_progress_labels, derive_rsd_labels, elapsed_feature
from .optim import GradAccumulator

FULL_BPTT_MAX_LEN = 512


@dataclass
class SequenceData:
    """One video prepared for a sequence model: padded inputs, mask and targets."""

    video_id: str
    frames: np.ndarray
    mask: np.ndarray
    elapsed: np.ndarray
    phase: np.ndarray | None = None
    rsd: np.ndarray | None = None
    prog: np.ndarray | None = None

    @property
    def length(self) -> int:
        return self.frames.shape[0]

    @property
    def valid_len(self) -> int:
        """Index one past the last unmasked frame.

        A causal model's outputs before this point never depend on later
        frames, so trailing padding can be skipped without changing any
        loss or gradient.
        """
        nz = np.flatnonzero(self.mask)
        return int(nz[-1]) + 1 if nz.size else 0


def make_sequence(record, s_norm=5.0, pad_to=None, targets="phase") -> SequenceData:
    """Build :class:`SequenceData`; ``targets`` is ``"phase"``, ``"rsd"`` or ``None``.

    Only ``"phase"`` reads the record's phase labels.
    """
    T = record.num_frames
    L = T if pad_to is None else pad_to
    if L < T:
        raise ValueError(f"pad_to={pad_to} shorter than record length {T}")
    frames = np.zeros((L, record.feature_dim))
    frames[:T] = record.frames
    mask = np.zeros(L)
    mask[:T] = 1.0
    elapsed = np.zeros(L)
    elapsed[:T] = elapsed_feature(record, s_norm)
    seq = SequenceData(record.video_id, frames, mask, elapsed)
    if targets == "phase":
        seq.phase = np.zeros(L, dtype=np.int64)
        seq.phase[:T] = record.phase_labels
    elif targets == "rsd":
        seq.rsd = np.zeros(L)
        seq.rsd[:T] = derive_rsd_labels(record, s_norm)
        seq.prog = np.zeros(L)
        seq.prog[:T] = derive_progress_labels(record)
    elif targets is not None:
        raise ValueError(f"unknown targets {targets!r}")
    return seq


def _objective(params, outputs, seq, sl, normalizer):
    mask = seq.mask[sl]
    if params.spec.variant == RSD_PROGRESS:
        loss, d_rsd, d_prog = rsd_progress_loss_grad(outputs["rsd"], outputs["prog"], seq.rsd[sl],
                                                     seq.prog[sl], mask, normalizer)
        return loss, {"rsd": d_rsd, "prog": d_prog}
    loss, d = phase_loss_grad(outputs["phase"], seq.phase[sl], mask, normalizer)
    return loss, {"phase": d}


def _inputs(params, seq, sl, features):
    elapsed = seq.elapsed[sl] if params.spec.uses_time_inputs else None
    if features is not None:
        return dict(features=features[sl], elapsed=elapsed)
    return dict(frames=seq.frames[sl], elapsed=elapsed)


def _normalizer(seq):
    n = float(np.sum(seq.mask))
    if n <= 0:
        raise ValueError(f"{seq.video_id}: no unmasked frames")
    return n


def full_bptt_grads(params, seq: SequenceData, features=None, encoder=True,
                    max_len: int | None = FULL_BPTT_MAX_LEN):
    """Loss and exact gradients with the whole sequence unrolled at once.

    ``max_len`` caps the unrolled length (the oracle keeps every activation
    in memory); pass ``None`` to lift the cap, e.g. for encoder-free LSTM
    training on precomputed features.
    """
    L = seq.valid_len
    if max_len is not None and L > max_len:
        raise ValueError(f"sequence of {L} frames exceeds the full-BPTT cap of {max_len}")
    sl = slice(0, L)
    norm = _normalizer(seq)
    outputs, _, trace = forward_subsequence(params, state=LstmState.zeros(params.spec.lstm_hidden),
                                            **_inputs(params, seq, sl, features))
    loss, head_grads = _objective(params, outputs, seq, sl, norm)
    grads, _ = backward_subsequence(params, trace, head_grads, None, encoder=encoder)
    acc = GradAccumulator(params, max_passes=1)
    acc.add(grads)
    return loss, acc.buffer


def truncated_bptt_grads(params, seq: SequenceData, subseq_len: int, features=None, encoder=True):
    """Loss and truncated-BPTT gradients summed over all subsequences of one video.

    A final subsequence shorter than ``subseq_len`` is processed as is; every
    frame is weighted by 1 / (number of unmasked frames), so the loss equals
    the whole-video loss regardless of ``subseq_len``.
    """
    if subseq_len < 1:
        raise ValueError("subseq_len must be >= 1")
    L = seq.valid_len
    norm = _normalizer(seq)
    passes = -(-seq.length // subseq_len)
    acc = GradAccumulator(params, max_passes=passes)
    state = LstmState.zeros(params.spec.lstm_hidden)
    loss = 0.0
    for start in range(0, L, subseq_len):
        sl = slice(start, min(start + subseq_len, L))
        outputs, state, trace = forward_subsequence(params, state=state,
                                                    **_inputs(params, seq, sl, features))
        part, head_grads = _objective(params, outputs, seq, sl, norm)
        grads, _ = backward_subsequence(params, trace, head_grads, None, encoder=encoder)
        acc.add(grads)
        loss += part
    return loss, acc.buffer


def sequence_loss(params, seq: SequenceData, subseq_len: int | None = None, features=None):
    """Forward-only loss (no trace kept beyond one subsequence)."""
    L = seq.valid_len
    step = L if subseq_len is None else subseq_len
    norm = _normalizer(seq)
    state = LstmState.zeros(params.spec.lstm_hidden)
    loss = 0.0
    for start in range(0, L, step):
        sl = slice(start, min(start + step, L))
        outputs, state, _ = forward_subsequence(params, state=state,
                                                **_inputs(params, seq, sl, features))
        loss += _objective(params, outputs, seq, sl, norm)[0]
    return loss
