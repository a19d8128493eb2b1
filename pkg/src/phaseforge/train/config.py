"""Training configuration: per-stage hyperparameters and the two shipped profiles."""

from __future__ import annotations

import math
from dataclasses import dataclass, asdict, fields, replace

STAGES = ("phase_encoder", "endon2n", "endolstm", "progress_encoder", "rsd", "tempcon")


@dataclass(frozen=True)
class TrainConfig:
    optimizer: str = "sgd"
    iterations: int = 1000
    alpha: float = 1e-3
    step_size: int | None = None
    gamma: float = 1.0
    batch_size: int = 50          # frames (or pairs) per update for frame-level stages
    subseq_len: int = 500         # frames per forward pass for sequence stages
    accum_passes: int = 12        # forward passes accumulated per update
    pad_to: int | None = 6000
    weight_decay: float = 5e-4    # L2 factor lambda
    momentum: float = 0.9
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    lr_mult_random: float = 10.0
    # sequence stages: total updates = epochs x videos; ``iterations`` and
    # ``step_size`` are the values quoted for ``reference_videos`` videos
    epochs: int | None = None
    reference_videos: int = 80
    # TempCon: passes over the sampled pairs and pairs drawn per video
    pairs_per_video: int = 50_000

    def __post_init__(self):
        if self.optimizer not in ("sgd", "adam"):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")
        if self.alpha <= 0:
            raise ValueError("alpha must be positive")
        if not 0 < self.gamma <= 1:
            raise ValueError("gamma must be in (0, 1]")
        if self.iterations < 0:
            raise ValueError("iterations must be >= 0")
        if self.weight_decay < 0:
            raise ValueError("weight_decay must be >= 0")
        if self.step_size is not None and self.step_size < 1:
            raise ValueError("step_size must be >= 1")
        if self.subseq_len < 1 or self.batch_size < 1:
            raise ValueError("subseq_len and batch_size must be >= 1")

    def lr(self, iteration: int, step_size: int | None = None) -> float:
        """Step-decayed base rate after ``iteration`` completed updates."""
        step = self.step_size if step_size is None else step_size
        if step is None:
            return self.alpha
        return self.alpha * self.gamma ** (iteration // step)

    def scaled_schedule(self, n_videos: int) -> tuple:
        """(iterations, step_size) for a sequence stage trained on ``n_videos`` videos."""
        if self.epochs is None:
            return self.iterations, self.step_size
        iters = self.epochs * n_videos
        if self.step_size is None or self.iterations == 0:
            return iters, self.step_size
        step = max(1, int(math.floor(self.step_size * iters / self.iterations + 0.5)))
        return iters, step

    def to_dict(self) -> dict:
        return asdict(self)


def _coerce(cls, key, value):
    ftype = {f.name: f.type for f in fields(cls)}[key]
    if isinstance(value, str):
        text = value.strip()
        if text.lower() in ("none", "null", "n/a", ""):
            return None
        if "int" in ftype and "float" not in ftype:
            return int(float(text))
        if "float" in ftype:
            return float(text)
        return text
    return value


def update_config(cfg, **changes):
    """``dataclasses.replace`` with string coercion, for config files and CLI flags."""
    typed = {k: _coerce(type(cfg), k, v) for k, v in changes.items()}
    return replace(cfg, **typed)


# Published full-scale hyperparameters.
PAPER_STAGES = {
    "phase_encoder": TrainConfig("sgd", 50_000, 1e-3, 20_000, 0.1, batch_size=50, weight_decay=5e-4),
    "endon2n": TrainConfig("adam", 8_000, 1e-4, 2_000, 0.25, subseq_len=500, accum_passes=12,
                           pad_to=6000, weight_decay=5e-4, epochs=100, reference_videos=80),
    "endolstm": TrainConfig("sgd", 30_000, 1e-3, 10_000, 0.1, subseq_len=6000, accum_passes=1,
                            pad_to=6000, weight_decay=5e-4, epochs=375, reference_videos=80),
    "progress_encoder": TrainConfig("sgd", 50_000, 1e-3, 15_000, 0.1, batch_size=64, weight_decay=5e-4),
    "rsd": TrainConfig("sgd", 8_000, 1e-3, 2_000, 0.5, subseq_len=500, accum_passes=12, pad_to=6000,
                       weight_decay=1e-3, epochs=100, reference_videos=80),
    "tempcon": TrainConfig("sgd", 50_000, 5e-4, None, 1.0, batch_size=160, weight_decay=5e-4,
                           epochs=2, pairs_per_video=50_000),
}

# Desk-scale profile: ~400-frame videos, 24 training videos per fold.
TOY_STAGES = {
    "phase_encoder": TrainConfig("sgd", 1500, 1e-2, 600, 0.1, batch_size=50, weight_decay=5e-4),
    "endon2n": TrainConfig("adam", 2400, 1e-3, 600, 0.25, subseq_len=50, accum_passes=12, pad_to=600,
                           weight_decay=5e-4, epochs=100, reference_videos=24),
    "endolstm": TrainConfig("sgd", 2400, 1e-2, 800, 0.1, subseq_len=600, accum_passes=1, pad_to=600,
                            weight_decay=5e-4, epochs=100, reference_videos=24),
    "progress_encoder": TrainConfig("sgd", 3000, 1e-1, 1200, 0.1, batch_size=64, weight_decay=5e-4),
    "rsd": TrainConfig("sgd", 2400, 1e-3, 600, 0.5, subseq_len=50, accum_passes=12, pad_to=600,
                       weight_decay=1e-3, epochs=100, reference_videos=24),
    "tempcon": TrainConfig("sgd", 600, 5e-3, None, 1.0, batch_size=160, weight_decay=5e-4,
                           epochs=2, pairs_per_video=2000),
}
