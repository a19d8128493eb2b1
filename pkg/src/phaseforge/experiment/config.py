"""Experiment configuration: flat ``key = value`` files, the toy and paper
profiles, and the seed derivation used by every protocol.

File format (``#`` / ``;`` start comments, a ``[section]`` header is optional)::

    profile = toy                 # base profile, applied before the other keys
    seed = 0
    data.n_videos = 36
    folds.count = 2
    folds.train = 24
    folds.val = 4
    folds.test = 8
    arch.encoder_widths = 64, 32
    arch.lstm_hidden = 128
    arch.s_norm = 5
    workflow.<field> = ...        # any WorkflowModel field; lists comma-separated
    <stage>.<field> = ...         # stage in STAGES, field any TrainConfig field
    sweep.pipeline = endon2n
    sweep.modes = none, rsd
    sweep.fractions = 25, 50, 100
    sweep.subsets = 25:2, 50:2, 100:1
    sweep.default_subsets = 2     # fractions missing from sweep.subsets
    sweep.pretrain_amounts = 0, 6, 12, 18
    sweep.finetune_videos = 6
    eval.filter_window = 5        # seconds; "none" disables the filter
    eval.undefined_precision = exclude
"""

from __future__ import annotations

import configparser
import hashlib
import json
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from ..nn.params import ArchSpec
from ..synth import WorkflowModel
from ..train.config import PAPER_STAGES, STAGES, TOY_STAGES, TrainConfig, update_config

MODES = ("none", "rsd", "tempcon")
PIPELINES = ("endon2n", "endolstm")
SECTION = "phaseforge"


class ConfigError(ValueError):
    """Bad config file, unknown key or inconsistent protocol settings."""


def derive_seed(root: int, *path) -> int:
    """Stage seed for ``path`` under ``root``.

    The entropy is ``[root, *utf8("/".join(path))]``; the seed is the first
    32-bit word of that SeedSequence's state. Every sub-experiment can be
    rerun on its own from (root, path).
    """
    key = "/".join(str(p) for p in path)
    ss = np.random.SeedSequence([int(root)] + list(key.encode("utf-8")))
    return int(ss.generate_state(1, dtype=np.uint32)[0])


@dataclass(frozen=True)
class ExperimentConfig:
    profile: str = "toy"
    seed: int = 0
    workflow: WorkflowModel = WorkflowModel()
    n_videos: int = 36
    n_folds: int = 2
    n_train: int = 24
    n_val: int = 4
    n_test: int = 8
    encoder_widths: tuple = (64, 32)
    lstm_hidden: int = 128
    s_norm: float = 5.0
    stages: dict = field(default_factory=lambda: dict(TOY_STAGES))
    pipeline: str = "endon2n"
    modes: tuple = ("none", "rsd")
    fractions: tuple = (25, 50, 100)
    subsets: dict = field(default_factory=lambda: {25: 2, 50: 2, 100: 1})
    default_subsets: int = 2
    pretrain_amounts: tuple = (0, 6, 12, 18)
    finetune_videos: int = 6
    filter_window: float | None = 5.0
    undefined_precision: str = "exclude"

    def arch(self, variant: str) -> ArchSpec:
        return ArchSpec(variant, self.workflow.feature_dim, self.encoder_widths, self.lstm_hidden,
                        self.workflow.num_phases, self.s_norm)

    def stage(self, name: str) -> TrainConfig:
        return self.stages[name]

    def n_subsets(self, fraction) -> int:
        return 1 if fraction == 100 else self.subsets.get(fraction, self.default_subsets)

    def validate(self) -> "ExperimentConfig":
        try:
            self.workflow.validate()
        except ValueError as e:
            raise ConfigError(f"workflow: {e}") from e
        if min(self.n_folds, self.n_train, self.n_val, self.n_test) < 1:
            raise ConfigError("folds.count/train/val/test must be >= 1")
        if self.n_train + self.n_val + self.n_test > self.n_videos:
            raise ConfigError("train + val + test videos exceed data.n_videos")
        if self.n_folds * self.n_test > self.n_videos:
            raise ConfigError("disjoint test sets need folds.count * folds.test <= data.n_videos")
        if set(self.stages) != set(STAGES):
            raise ConfigError(f"stage configs must cover {STAGES}")
        if self.pipeline not in PIPELINES:
            raise ConfigError(f"sweep.pipeline must be one of {PIPELINES}")
        if not self.modes or any(m not in MODES for m in self.modes):
            raise ConfigError(f"sweep.modes must be a subset of {MODES}")
        if not self.fractions or any(not 0 < f <= 100 for f in self.fractions):
            raise ConfigError("sweep.fractions must lie in (0, 100]")
        if self.default_subsets < 1 or any(c < 1 for c in self.subsets.values()):
            raise ConfigError("subset counts must be >= 1")
        if any(a < 0 for a in self.pretrain_amounts):
            raise ConfigError("sweep.pretrain_amounts must be >= 0")
        if self.finetune_videos < 4:
            raise ConfigError("sweep.finetune_videos must be >= 4")
        if max(self.pretrain_amounts, default=0) + self.finetune_videos > self.n_train:
            raise ConfigError("largest pretrain amount plus finetune videos exceeds folds.train")
        if self.undefined_precision not in ("exclude", "zero"):
            raise ConfigError("eval.undefined_precision must be exclude or zero")
        try:
            self.arch("endon2n-vanilla")
        except ValueError as e:
            raise ConfigError(f"arch: {e}") from e
        return self

    def to_dict(self) -> dict:
        return {
            "profile": self.profile, "seed": self.seed, "workflow": self.workflow.to_dict(),
            "n_videos": self.n_videos, "n_folds": self.n_folds, "n_train": self.n_train,
            "n_val": self.n_val, "n_test": self.n_test, "encoder_widths": list(self.encoder_widths),
            "lstm_hidden": self.lstm_hidden, "s_norm": self.s_norm,
            "stages": {k: self.stages[k].to_dict() for k in sorted(self.stages)},
            "pipeline": self.pipeline, "modes": list(self.modes), "fractions": list(self.fractions),
            "subsets": {str(k): v for k, v in sorted(self.subsets.items())},
            "default_subsets": self.default_subsets, "pretrain_amounts": list(self.pretrain_amounts),
            "finetune_videos": self.finetune_videos, "filter_window": self.filter_window,
            "undefined_precision": self.undefined_precision,
        }

    def config_hash(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode("utf-8")
        return hashlib.sha256(blob).hexdigest()


def toy_config(seed: int = 0) -> ExperimentConfig:
    """Desk-scale protocol: 2 folds of 24/4/8 videos, fractions {25, 50, 100}%."""
    return ExperimentConfig(seed=seed)


def paper_config(seed: int = 0) -> ExperimentConfig:
    """4-fold 80/10/30 protocol with the published hyperparameters."""
    return ExperimentConfig(
        profile="paper", seed=seed, n_videos=120, n_folds=4, n_train=80, n_val=10, n_test=30,
        stages=dict(PAPER_STAGES), modes=("none", "rsd", "tempcon"),
        fractions=(10, 20, 25, 40, 50, 80, 100),
        subsets={10: 4, 20: 4, 25: 4, 40: 4, 50: 4, 80: 2, 100: 1},
        default_subsets=4, pretrain_amounts=(0, 20, 40, 60), finetune_videos=20,
    )


PROFILES = {"toy": toy_config, "paper": paper_config}


# --- parsing -------------------------------------------------------------------

def _number(text):
    f = float(text)
    return int(f) if f.is_integer() and "." not in text and "e" not in text.lower() else f


def _num_list(text):
    return tuple(_number(t.strip()) for t in text.split(",") if t.strip())


def _subset_map(text):
    out = {}
    for item in text.split(","):
        if not item.strip():
            continue
        frac, _, count = item.partition(":")
        if not count:
            raise ConfigError(f"sweep.subsets entry {item.strip()!r} is not fraction:count")
        out[_number(frac.strip())] = int(count)
    return out


def _workflow_value(name, text):
    ftype = {f.name: f.type for f in fields(WorkflowModel)}[name]
    if "tuple" in ftype:
        return tuple(float(t) for t in text.split(","))
    if "int" in ftype:
        return int(text)
    return float(text)


def read_pairs(path) -> dict:
    """Key/value pairs of a flat config file (section headers optional)."""
    text = Path(path).read_text()
    parser = configparser.ConfigParser(inline_comment_prefixes=("#", ";"), interpolation=None)
    try:
        if not text.lstrip().startswith("["):
            text = f"[{SECTION}]\n" + text
        parser.read_string(text)
    except configparser.Error as e:
        raise ConfigError(f"{path}: {e}") from e
    pairs = {}
    for section in parser.sections():
        pairs.update(parser.items(section))
    return pairs


def apply_pairs(cfg: ExperimentConfig, pairs: dict) -> ExperimentConfig:
    """Apply flat overrides in file order; ``profile`` resets the base first."""
    pairs = dict(pairs)
    if "profile" in pairs:
        name = pairs.pop("profile").strip()
        if name not in PROFILES:
            raise ConfigError(f"unknown profile {name!r}")
        cfg = PROFILES[name](cfg.seed)
    changes, workflow, stages = {}, {}, {k: dict() for k in STAGES}
    simple = {
        "seed": ("seed", int), "data.n_videos": ("n_videos", int), "folds.count": ("n_folds", int),
        "folds.train": ("n_train", int), "folds.val": ("n_val", int), "folds.test": ("n_test", int),
        "arch.encoder_widths": ("encoder_widths", lambda t: tuple(int(x) for x in _num_list(t))),
        "arch.lstm_hidden": ("lstm_hidden", int), "arch.s_norm": ("s_norm", float),
        "sweep.pipeline": ("pipeline", str.strip),
        "sweep.modes": ("modes", lambda t: tuple(m.strip() for m in t.split(",") if m.strip())),
        "sweep.fractions": ("fractions", _num_list), "sweep.subsets": ("subsets", _subset_map),
        "sweep.default_subsets": ("default_subsets", int),
        "sweep.pretrain_amounts": ("pretrain_amounts", lambda t: tuple(int(x) for x in _num_list(t))),
        "sweep.finetune_videos": ("finetune_videos", int),
        "eval.filter_window": ("filter_window",
                               lambda t: None if t.strip().lower() == "none" else float(t)),
        "eval.undefined_precision": ("undefined_precision", str.strip),
    }
    stage_fields = {f.name for f in fields(TrainConfig)}
    workflow_fields = {f.name for f in fields(WorkflowModel)}
    for key, value in pairs.items():
        key = key.strip().lower()
        try:
            if key in simple:
                attr, conv = simple[key]
                changes[attr] = conv(value)
                continue
            head, _, tail = key.partition(".")
            if head == "workflow" and tail in workflow_fields:
                workflow[tail] = _workflow_value(tail, value)
            elif head in STAGES and tail in stage_fields:
                stages[head][tail] = value
            else:
                raise ConfigError(f"unknown config key {key!r}")
        except ConfigError:
            raise
        except (TypeError, ValueError) as e:
            raise ConfigError(f"{key} = {value!r}: {e}") from e
    if workflow:
        changes["workflow"] = replace(cfg.workflow, **workflow)
    if any(stages.values()):
        new = dict(cfg.stages)
        for name, kv in stages.items():
            if kv:
                try:
                    new[name] = update_config(new[name], **kv)
                except (TypeError, ValueError) as e:
                    raise ConfigError(f"{name}: {e}") from e
        changes["stages"] = new
    return replace(cfg, **changes)


def load_config(path=None, paper_scale: bool = False, seed: int | None = None,
                overrides: dict | None = None) -> ExperimentConfig:
    """Profile, then file keys, then explicit overrides (CLI flags win)."""
    cfg = paper_config() if paper_scale else toy_config()
    if path is not None:
        pairs = read_pairs(path)
        if paper_scale:
            pairs.pop("profile", None)
        cfg = apply_pairs(cfg, pairs)
    if overrides:
        cfg = apply_pairs(cfg, overrides)
    if seed is not None:
        cfg = replace(cfg, seed=int(seed))
    return cfg.validate()
