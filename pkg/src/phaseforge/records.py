"""Surgery records and the phase-label access guard.

Pre-training stages must never look at manual phase annotations. Every read
of ``SurgeryRecord.phase_labels`` goes through a hook that a
:func:`label_guard` context can count or forbid.
"""

from __future__ import annotations

import contextlib
import contextvars
from dataclasses import dataclass, field

import numpy as np


class LabelAccessError(RuntimeError):
    """Raised when phase labels are read inside a forbidding label guard."""


@dataclass
class LabelAccessMonitor:
    stage: str
    forbid: bool = True
    reads: int = 0
    videos: set = field(default_factory=set)


_MONITORS: contextvars.ContextVar[tuple] = contextvars.ContextVar("label_monitors", default=())


@contextlib.contextmanager
def label_guard(stage: str, forbid: bool = True):
    """Track (and by default forbid) phase-label reads within the block.

    Worker threads only see the guard if they run inside a copied context,
    see :func:`phaseforge.parallel.map_ordered`.
    """
    monitor = LabelAccessMonitor(stage=stage, forbid=forbid)
    token = _MONITORS.set(_MONITORS.get() + (monitor,))
    try:
        yield monitor
    finally:
        _MONITORS.reset(token)


def _note_label_read(video_id: str) -> None:
    for monitor in _MONITORS.get():
        monitor.reads += 1
        monitor.videos.add(video_id)
        if monitor.forbid:
            raise LabelAccessError(
                f"phase labels of {video_id!r} read during label-free stage {monitor.stage!r}"
            )


class SurgeryRecord:
    """One synthetic surgery: per-frame features and 1-based phase labels."""

    def __init__(self, video_id: str, fps: float, frames, phase_labels):
        frames = np.ascontiguousarray(frames, dtype=np.float64)
        labels = np.asarray(phase_labels, dtype=np.int64)
        if frames.ndim != 2:
            raise ValueError("frames must be a (T, D) array")
        if labels.shape != (frames.shape[0],):
            raise ValueError("phase_labels length must match number of frames")
        if fps <= 0:
            raise ValueError("fps must be positive")
        self.video_id = str(video_id)
        self.fps = float(fps)
        self.frames = frames
        self._phase_labels = labels
        self.frames.flags.writeable = False
        self._phase_labels.flags.writeable = False

    @property
    def phase_labels(self) -> np.ndarray:
        _note_label_read(self.video_id)
        return self._phase_labels

    @property
    def num_frames(self) -> int:
        return self.frames.shape[0]

    @property
    def feature_dim(self) -> int:
        return self.frames.shape[1]

    @property
    def duration(self) -> float:
        """Duration in seconds."""
        return self.num_frames / self.fps

    def elapsed_seconds(self) -> np.ndarray:
        # frame t covers time up to (t+1)/fps, so the last frame ends the surgery
        return np.arange(1, self.num_frames + 1, dtype=np.float64) / self.fps

    def timestamps(self) -> np.ndarray:
        return np.arange(self.num_frames, dtype=np.float64) / self.fps

    def truncated(self, k: int) -> "SurgeryRecord":
        """First ``k`` frames as a new record (labels copied without a guarded read)."""
        return SurgeryRecord(self.video_id, self.fps, self.frames[:k], self._phase_labels[:k])

    def same_as(self, other: "SurgeryRecord") -> bool:
        return (
            self.video_id == other.video_id
            and self.fps == other.fps
            and np.array_equal(self.frames, other.frames)
            and np.array_equal(self._phase_labels, other._phase_labels)
        )

    def __repr__(self):
        return f"SurgeryRecord({self.video_id!r}, T={self.num_frames}, D={self.feature_dim}, fps={self.fps:g})"
