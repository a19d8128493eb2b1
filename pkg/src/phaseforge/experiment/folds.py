"""Cross-validation folds and annotation-fraction subsampling."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class FoldSpec:
    fold_id: int
    train_ids: tuple
    val_ids: tuple
    test_ids: tuple

    def __post_init__(self):
        for name in ("train_ids", "val_ids", "test_ids"):
            object.__setattr__(self, name, tuple(str(v) for v in getattr(self, name)))

    def validate(self, dataset_ids=None) -> "FoldSpec":
        tr, va, te = set(self.train_ids), set(self.val_ids), set(self.test_ids)
        if len(tr) != len(self.train_ids) or len(va) != len(self.val_ids) or len(te) != len(self.test_ids):
            raise ValueError(f"fold {self.fold_id}: duplicate ids")
        if tr & va or tr & te or va & te:
            raise ValueError(f"fold {self.fold_id}: train/val/test ids overlap")
        if dataset_ids is not None:
            unknown = (tr | va | te) - set(dataset_ids)
            if unknown:
                raise ValueError(f"fold {self.fold_id}: ids not in dataset: {sorted(unknown)}")
        return self

    def to_dict(self) -> dict:
        return {"fold_id": self.fold_id, "train_ids": list(self.train_ids),
                "val_ids": list(self.val_ids), "test_ids": list(self.test_ids)}


def make_folds(video_ids, n_folds: int, n_train: int, n_val: int, n_test: int, seed) -> list:
    """Folds with pairwise disjoint test sets.

    One seeded permutation hands out the test sets; each fold then splits
    the remaining videos into validation and training ids with its own
    stream. Ids inside each set keep dataset order.
    """
    ids = [str(v) for v in video_ids]
    if len(set(ids)) != len(ids):
        raise ValueError("duplicate video ids")
    if n_folds * n_test > len(ids):
        raise ValueError(f"{n_folds} disjoint test sets of {n_test} need more than {len(ids)} videos")
    if n_train + n_val + n_test > len(ids):
        raise ValueError("train + val + test exceeds the number of videos")
    rank = {v: i for i, v in enumerate(ids)}

    def ordered(sel):
        return tuple(sorted(sel, key=rank.__getitem__))

    perm = [ids[i] for i in np.random.default_rng(np.random.SeedSequence([int(seed), 0])).permutation(len(ids))]
    folds = []
    for k in range(n_folds):
        test = perm[k * n_test:(k + 1) * n_test]
        rest = [v for v in ids if v not in set(test)]
        rng = np.random.default_rng(np.random.SeedSequence([int(seed), k + 1]))
        rest = [rest[i] for i in rng.permutation(len(rest))]
        folds.append(FoldSpec(k, ordered(rest[n_val:n_val + n_train]), ordered(rest[:n_val]),
                              ordered(test)).validate(ids))
    return folds


def round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


def duration_quartiles(train_ids, durations) -> list:
    """Ids split into 4 duration-rank groups (shortest first; ties broken by id)."""
    ids = [str(v) for v in train_ids]
    dur = _durations(ids, durations)
    order = sorted(range(len(ids)), key=lambda i: (dur[i], ids[i]))
    return [[ids[i] for i in chunk] for chunk in np.array_split(np.array(order, dtype=int), 4)]


def _durations(ids, durations):
    if isinstance(durations, dict):
        return [float(durations[v]) for v in ids]
    durations = [float(d) for d in durations]
    if len(durations) != len(ids):
        raise ValueError("durations must align with train_ids")
    return durations


def subset_size(n: int, fraction: float) -> int:
    return round_half_up(fraction * n / 100.0)


def subsample_annotated(train_ids, durations, fraction: float, seed) -> tuple:
    """Duration-stratified labeled subset: an equal share from each quartile.

    When the size is not a multiple of 4 the leftover picks go to quartiles
    chosen by ``seed``. Returned ids keep ``train_ids`` order.
    """
    ids = [str(v) for v in train_ids]
    if not 0 < fraction <= 100:
        raise ValueError(f"fraction must be in (0, 100], got {fraction}")
    size = subset_size(len(ids), fraction)
    if size > len(ids):
        raise ValueError(f"requested {size} videos from a pool of {len(ids)}")
    if fraction == 100:
        return tuple(ids)
    if len(ids) < 4:
        raise ValueError("need at least 4 training videos to form duration quartiles")
    if size < 1:
        raise ValueError(f"fraction {fraction}% of {len(ids)} videos rounds to 0")
    quartiles = duration_quartiles(ids, durations)
    rng = np.random.default_rng(seed)
    base, rem = divmod(size, 4)
    counts = [base] * 4
    open_q = [q for q in range(4) if len(quartiles[q]) > base]
    if rem > len(open_q):
        raise ValueError(f"cannot draw {size} videos evenly from quartiles of sizes "
                         f"{[len(q) for q in quartiles]}")
    for q in rng.choice(open_q, size=rem, replace=False):
        counts[int(q)] += 1
    picked = set()
    for q, c in zip(quartiles, counts):
        if c > len(q):
            raise ValueError(f"quartile of {len(q)} videos cannot supply {c}")
        picked.update(q[i] for i in rng.choice(len(q), size=c, replace=False))
    return tuple(v for v in ids if v in picked)


def split_finetune_pool(subset_ids, seed) -> tuple:
    """round(0.75 n) ids for the frame-level encoder fine-tuning step."""
    ids = [str(v) for v in subset_ids]
    if len(ids) < 4:
        raise ValueError("the fine-tuning subset needs at least 4 videos")
    k = round_half_up(0.75 * len(ids))
    chosen = set(np.random.default_rng(seed).choice(len(ids), size=k, replace=False).tolist())
    return tuple(v for i, v in enumerate(ids) if i in chosen)
