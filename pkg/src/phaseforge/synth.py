"""Phase-structured synthetic surgeries and their self-supervised labels.

Each synthetic surgery walks through the phases 1..M in order. A frame's
feature vector is a one-hot phase code in the first M dimensions plus
Gaussian noise, except for the last dimension, which holds a noise-free,
slowly growing elapsed-time channel. Remaining duration, progress and
frame-pair order labels are derived from timestamps alone.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, asdict
from pathlib import Path

import numpy as np

from .records import SurgeryRecord

# Plumbing defaults for a 7-phase workflow (~400 s at 1 fps); not real Cholec80 statistics.
DEFAULT_PHASE_MEANS = (30.0, 70.0, 45.0, 90.0, 55.0, 45.0, 65.0)
DEFAULT_PHASE_STDS = (8.0, 18.0, 12.0, 22.0, 14.0, 12.0, 16.0)


@dataclass(frozen=True)
class WorkflowModel:
    num_phases: int = 7
    phase_duration_mean: tuple = DEFAULT_PHASE_MEANS
    phase_duration_std: tuple = DEFAULT_PHASE_STDS
    min_phase_duration: float = 5.0
    feature_dim: int = 16
    emission_noise_std: float = 0.8
    fps: float = 1.0
    # elapsed-time channel value = elapsed minutes / time_channel_minutes
    time_channel_minutes: float = 10.0
    phase_amplitude: float = 1.0
    phase_skip_prob: float = 0.0

    def validate(self) -> None:
        m = self.num_phases
        if m < 1:
            raise ValueError("num_phases must be >= 1")
        if len(self.phase_duration_mean) != m or len(self.phase_duration_std) != m:
            raise ValueError("duration mean/std lists must have num_phases entries")
        if any(mu <= 0 for mu in self.phase_duration_mean):
            raise ValueError("phase duration means must be positive")
        if any(sd < 0 for sd in self.phase_duration_std):
            raise ValueError("phase duration stds must be non-negative")
        if self.fps <= 0:
            raise ValueError("fps must be positive")
        if self.min_phase_duration < 1.0 / self.fps:
            raise ValueError("min_phase_duration must cover at least one frame")
        # one-hot block in dims [0, M), time channel in the last dim
        if self.feature_dim < m + 1:
            raise ValueError("feature_dim must be at least num_phases + 1")
        if self.emission_noise_std < 0:
            raise ValueError("emission_noise_std must be non-negative")
        if not 0.0 <= self.phase_skip_prob < 1.0:
            raise ValueError("phase_skip_prob must be in [0, 1)")
        if self.time_channel_minutes <= 0:
            raise ValueError("time_channel_minutes must be positive")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["phase_duration_mean"] = list(self.phase_duration_mean)
        d["phase_duration_std"] = list(self.phase_duration_std)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "WorkflowModel":
        d = dict(d)
        d["phase_duration_mean"] = tuple(d["phase_duration_mean"])
        d["phase_duration_std"] = tuple(d["phase_duration_std"])
        return cls(**d)


def _sample_duration(rng: np.random.Generator, mean: float, std: float, floor: float) -> float:
    if std == 0:
        return max(mean, floor)
    # rejection sampling: normal truncated below at ``floor``
    while True:
        d = rng.normal(mean, std)
        if d >= floor:
            return d


def sample_phase_frames(model: WorkflowModel, rng: np.random.Generator) -> list:
    """Frame counts per phase (0 for skipped phases)."""
    counts = []
    for p in range(model.num_phases):
        d = _sample_duration(rng, model.phase_duration_mean[p], model.phase_duration_std[p],
                             model.min_phase_duration)
        n = max(1, int(round(d * model.fps)))
        skippable = 0 < p < model.num_phases - 1
        if skippable and model.phase_skip_prob > 0 and rng.random() < model.phase_skip_prob:
            n = 0
        counts.append(n)
    return counts


def generate_surgery(model: WorkflowModel, seed, video_id: str | None = None) -> SurgeryRecord:
    model.validate()
    rng = np.random.default_rng(seed)
    counts = sample_phase_frames(model, rng)
    labels = np.repeat(np.arange(1, model.num_phases + 1), counts)
    T = labels.shape[0]
    D = model.feature_dim
    frames = rng.normal(0.0, model.emission_noise_std, size=(T, D))
    frames[np.arange(T), labels - 1] += model.phase_amplitude
    # the reserved last dimension carries no noise so it stays strictly monotone
    elapsed_min = np.arange(1, T + 1) / model.fps / 60.0
    frames[:, D - 1] = elapsed_min / model.time_channel_minutes
    if video_id is None:
        video_id = f"video-{seed}"
    return SurgeryRecord(video_id, model.fps, frames, labels)


def video_seed(seed: int, index: int) -> np.random.SeedSequence:
    """Seed for record ``index`` of a dataset: the entropy pair (seed, index)."""
    return np.random.SeedSequence([int(seed), int(index)])


def generate_dataset(model: WorkflowModel, n_videos: int, seed: int) -> list:
    if n_videos < 1:
        raise ValueError("n_videos must be >= 1")
    model.validate()
    return [generate_surgery(model, video_seed(seed, i), video_id=f"v{i:03d}")
            for i in range(n_videos)]


def derive_progress_labels(record: SurgeryRecord) -> np.ndarray:
    T = record.num_frames
    if T < 1:
        raise ValueError("empty record")
    return record.elapsed_seconds() / record.duration


def derive_rsd_labels(record: SurgeryRecord, s_norm: float = 5.0) -> np.ndarray:
    """Remaining surgery duration in minutes, divided by ``s_norm``."""
    if s_norm <= 0:
        raise ValueError("s_norm must be positive")
    total_min = record.duration / 60.0
    elapsed_min = record.elapsed_seconds() / 60.0
    return (total_min - elapsed_min) / s_norm


def elapsed_feature(record: SurgeryRecord, s_norm: float = 5.0) -> np.ndarray:
    """Elapsed-time LSTM input, scaled like the RSD targets (minutes / s_norm)."""
    return record.elapsed_seconds() / 60.0 / s_norm


@dataclass
class FramePair:
    frame_a: np.ndarray
    frame_b: np.ndarray
    label: int
    # provenance for verification; carries no phase information
    index_a: int = -1
    index_b: int = -1
    video_id: str = ""


def sample_pair_indices(T: int, n_pairs: int, rng: np.random.Generator):
    """Uniform ordered pairs of distinct frame indices, shape (n_pairs,) each."""
    if T < 2:
        raise ValueError("need at least two frames to sample pairs")
    i = rng.integers(T, size=n_pairs)
    j = rng.integers(T - 1, size=n_pairs)
    j = j + (j >= i)
    swap = rng.random(n_pairs) < 0.5
    return np.where(swap, j, i), np.where(swap, i, j)


def sample_frame_pairs(record: SurgeryRecord, n_pairs: int, seed) -> list:
    """Random frame pairs labelled 0 if ``frame_a`` comes first, else 1."""
    rng = np.random.default_rng(seed)
    a_idx, b_idx = sample_pair_indices(record.num_frames, n_pairs, rng)
    return [FramePair(record.frames[a], record.frames[b], int(a > b), int(a), int(b), record.video_id)
            for a, b in zip(a_idx, b_idx)]


def sample_pair_arrays(records, n_per_video: int, seed):
    """Stacked pair dataset over several videos: (frames_a, frames_b, labels)."""
    A, B, Y = [], [], []
    for k, r in enumerate(records):
        rng = np.random.default_rng(np.random.SeedSequence([int(seed), k]))
        a_idx, b_idx = sample_pair_indices(r.num_frames, n_per_video, rng)
        A.append(r.frames[a_idx])
        B.append(r.frames[b_idx])
        Y.append((a_idx > b_idx).astype(np.int64))
    return np.concatenate(A), np.concatenate(B), np.concatenate(Y)


def pad_sequence(record: SurgeryRecord, pad_to: int):
    """Zero-pad features to ``pad_to`` frames; returns (features, labels, mask)."""
    features, mask = pad_features(record, pad_to)
    labels = np.zeros(pad_to, dtype=np.int64)
    labels[: record.num_frames] = record.phase_labels
    return features, labels, mask


def pad_features(record: SurgeryRecord, pad_to: int):
    """Label-free variant of :func:`pad_sequence`."""
    T = record.num_frames
    if pad_to < T:
        raise ValueError(f"pad_to={pad_to} shorter than record length {T}")
    features = np.zeros((pad_to, record.feature_dim))
    features[:T] = record.frames
    mask = np.zeros(pad_to)
    mask[:T] = 1.0
    return features, mask


# --- on-disk dataset -------------------------------------------------------

MANIFEST = "manifest.json"


def save_dataset(records, directory, model: WorkflowModel | None = None) -> Path:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    first = records[0]
    manifest = {
        "video_ids": [r.video_id for r in records],
        "fps": first.fps,
        "feature_dim": first.feature_dim,
        "num_phases": int(max(int(r._phase_labels.max()) for r in records)),
    }
    if model is not None:
        manifest["num_phases"] = model.num_phases
        manifest["workflow_model"] = model.to_dict()
    for r in records:
        with open(directory / f"{r.video_id}.jsonl", "w") as fh:
            for t in range(r.num_frames):
                # json writes floats via repr(): shortest round-trip form (<=17 sig. digits)
                row = {"t": t, "phase": int(r._phase_labels[t]), "features": r.frames[t].tolist()}
                fh.write(json.dumps(row) + "\n")
    with open(directory / MANIFEST, "w") as fh:
        json.dump(manifest, fh, indent=2)
    return directory


def load_dataset(directory) -> list:
    directory = Path(directory)
    with open(directory / MANIFEST) as fh:
        manifest = json.load(fh)
    records = []
    for vid in manifest["video_ids"]:
        feats, labels = [], []
        with open(directory / f"{vid}.jsonl") as fh:
            for expected_t, line in enumerate(fh):
                row = json.loads(line)
                if row["t"] != expected_t:
                    raise ValueError(f"{vid}: frame index {row['t']} out of order")
                feats.append(row["features"])
                labels.append(row["phase"])
        records.append(SurgeryRecord(vid, manifest["fps"], np.array(feats), labels))
    return records


def load_manifest(directory) -> dict:
    with open(Path(directory) / MANIFEST) as fh:
        return json.load(fh)
