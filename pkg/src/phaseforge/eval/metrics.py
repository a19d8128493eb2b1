"""Phase recognition metrics: accuracy, per-phase precision/recall, F1,
phase-boundary temporal distance, noise, and the causal mode filter.

Labels are 1-based phase ids. Percentages are in [0, 100]; undefined
per-phase values are NaN.
"""

from __future__ import annotations

import csv
import json
import math
from collections import Counter
from dataclasses import dataclass, field, asdict
from pathlib import Path

import numpy as np


def _pair(pred, gt):
    pred = np.asarray(pred)
    gt = np.asarray(gt)
    if pred.shape != gt.shape:
        raise ValueError(f"prediction length {pred.shape} != ground truth length {gt.shape}")
    return pred, gt


def runs(labels):
    """Maximal constant runs as (label, start, stop) with ``stop`` exclusive."""
    labels = np.asarray(labels)
    if labels.size == 0:
        return []
    cuts = np.flatnonzero(labels[1:] != labels[:-1]) + 1
    starts = np.concatenate([[0], cuts])
    stops = np.concatenate([cuts, [labels.size]])
    return [(int(labels[s]), int(s), int(e)) for s, e in zip(starts, stops)]


def causal_mode_filter(labels, window: float = 5.0, fps: float = 1.0, centered: bool = False):
    """Sliding-window majority vote.

    Causal (default): output[t] is the mode of labels[t-w+1 .. t] with
    w = round(window * fps); ties go to the tied label seen most recently.
    ``centered`` votes over a window around t instead (offline use only).
    """
    labels = np.asarray(labels)
    w = int(round(window * fps))
    if w < 1:
        raise ValueError("filter window must span at least one frame")
    out = labels.copy()
    T = labels.size
    for t in range(T):
        if centered:
            lo, hi = max(0, t - w // 2), min(T, t + (w - 1) // 2 + 1)
        else:
            lo, hi = max(0, t - w + 1), t + 1
        seg = labels[lo:hi]
        counts = Counter(seg.tolist())
        top = max(counts.values())
        if counts.get(int(labels[t]), 0) == top and centered:
            out[t] = labels[t]
            continue
        for v in seg[::-1]:
            if counts[int(v)] == top:
                out[t] = v
                break
    return out


def accuracy(pred, gt) -> float:
    pred, gt = _pair(pred, gt)
    if gt.size == 0:
        raise ValueError("empty sequences")
    return 100.0 * float(np.sum(pred == gt)) / gt.size


def per_phase_precision_recall(pred, gt, num_phases: int, undefined_precision: str = "exclude"):
    """Per-phase precision and recall plus their averages.

    A phase never predicted has undefined precision: excluded from the
    average (``"exclude"``) or counted as 0 (``"zero"``). A phase absent
    from the ground truth has undefined recall and is excluded from the
    recall average.
    """
    pred, gt = _pair(pred, gt)
    precision = np.full(num_phases, np.nan)
    recall = np.full(num_phases, np.nan)
    for p in range(1, num_phases + 1):
        tp = float(np.sum((pred == p) & (gt == p)))
        n_pred = float(np.sum(pred == p))
        n_gt = float(np.sum(gt == p))
        if n_pred > 0:
            precision[p - 1] = 100.0 * tp / n_pred
        elif n_gt > 0 and undefined_precision == "zero":
            precision[p - 1] = 0.0
        if n_gt > 0:
            recall[p - 1] = 100.0 * tp / n_gt
    return precision, recall, _nanmean(precision), _nanmean(recall)


def _nanmean(x) -> float:
    x = np.asarray(x, dtype=np.float64)
    ok = ~np.isnan(x)
    return float(np.mean(x[ok])) if ok.any() else float("nan")


def f1(avg_precision: float, avg_recall: float) -> float:
    if avg_precision + avg_recall == 0:
        return 0.0
    return 2.0 * avg_precision * avg_recall / (avg_precision + avg_recall)


def temporal_distance(pred, gt, fps: float = 1.0, mode: str = "first"):
    """Seconds between each ground-truth phase onset and its predicted onset.

    ``first``: the earliest frame predicted as the phase. ``closest``: the
    predicted run onset nearest to the true onset. Returns (distances, missed)
    where ``distances`` maps phase -> seconds for every phase present in the
    ground truth, and ``missed`` lists phases never predicted (their distance
    is the video duration).
    """
    pred, gt = _pair(pred, gt)
    if mode not in ("first", "closest"):
        raise ValueError(f"unknown mode {mode!r}")
    duration = gt.size / fps
    pred_onsets = {}
    for lab, start, _ in runs(pred):
        pred_onsets.setdefault(lab, []).append(start)
    distances, missed = {}, []
    for lab, start, _ in runs(gt):
        if lab in distances:
            continue  # gt phases are sequential; use the first onset
        onsets = pred_onsets.get(lab)
        if not onsets:
            distances[lab] = duration
            missed.append(lab)
        elif mode == "first":
            distances[lab] = abs(onsets[0] - start) / fps
        else:
            distances[lab] = min(abs(o - start) for o in onsets) / fps
    return distances, missed


def noise_pct(pred, gt) -> float:
    """Share of frames inside predicted runs that never overlap the same phase in the ground truth."""
    pred, gt = _pair(pred, gt)
    if gt.size == 0:
        raise ValueError("empty sequences")
    noisy = sum(e - s for lab, s, e in runs(pred) if not np.any(gt[s:e] == lab))
    return 100.0 * noisy / gt.size


# --- reports ----------------------------------------------------------------

SCALAR_METRICS = ("accuracy", "avg_precision", "avg_recall", "f1", "noise",
                  "temporal_distance_first_mean", "temporal_distance_closest_mean")


@dataclass
class MetricsReport:
    video_id: str
    accuracy: float
    precision: list
    recall: list
    avg_precision: float
    avg_recall: float
    f1: float
    temporal_distance_first: list
    temporal_distance_closest: list
    temporal_distance_first_mean: float
    temporal_distance_closest_mean: float
    missed_phases: list
    noise: float
    filter_window: float | None = None

    def to_dict(self) -> dict:
        return jsonable(asdict(self))


def jsonable(obj):
    if isinstance(obj, float):
        return None if math.isnan(obj) else obj
    if isinstance(obj, dict):
        return {k: jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [jsonable(v) for v in obj]
    if isinstance(obj, np.generic):
        return jsonable(obj.item())
    return obj


def evaluate_video(pred, gt, num_phases: int, fps: float = 1.0, video_id: str = "",
                   filter_window: float | None = 5.0, undefined_precision: str = "exclude") -> MetricsReport:
    """Frame metrics on raw predictions; boundary metrics on mode-filtered predictions."""
    pred, gt = _pair(pred, gt)
    prec, rec, ap, ar = per_phase_precision_recall(pred, gt, num_phases, undefined_precision)
    filtered = pred if filter_window is None else causal_mode_filter(pred, filter_window, fps)
    td_first, missed = temporal_distance(filtered, gt, fps, "first")
    td_closest, _ = temporal_distance(filtered, gt, fps, "closest")

    def as_list(d):
        return [float(d[p]) if p in d else float("nan") for p in range(1, num_phases + 1)]

    def hit_mean(d):
        vals = [v for p, v in d.items() if p not in missed]
        return float(np.mean(vals)) if vals else float("nan")

    return MetricsReport(
        video_id=video_id, accuracy=accuracy(pred, gt), precision=prec.tolist(), recall=rec.tolist(),
        avg_precision=ap, avg_recall=ar, f1=f1(ap, ar),
        temporal_distance_first=as_list(td_first), temporal_distance_closest=as_list(td_closest),
        temporal_distance_first_mean=hit_mean(td_first),
        temporal_distance_closest_mean=hit_mean(td_closest),
        missed_phases=sorted(missed), noise=noise_pct(filtered, gt), filter_window=filter_window,
    )


@dataclass
class AggregateReport:
    """Mean and std per metric; F1 is recomputed from the mean avg precision/recall."""

    mean: dict
    std: dict
    per_phase_precision: list
    per_phase_recall: list
    n_videos: int
    missed_phase_count: int = 0
    level: str = "videos"
    members: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return jsonable(asdict(self))


def aggregate(reports) -> AggregateReport:
    """Mean and population std over videos (NaNs skipped per metric)."""
    reports = list(reports)
    if not reports:
        raise ValueError("need at least one report")
    mean, std = {}, {}
    for key in SCALAR_METRICS:
        vals = np.array([getattr(r, key) for r in reports], dtype=np.float64)
        vals = vals[~np.isnan(vals)]
        mean[key] = float(np.mean(vals)) if vals.size else float("nan")
        std[key] = float(np.std(vals)) if vals.size else float("nan")
    mean["f1"] = f1(mean["avg_precision"], mean["avg_recall"])
    prec = np.array([r.precision for r in reports], dtype=np.float64)
    rec = np.array([r.recall for r in reports], dtype=np.float64)
    return AggregateReport(
        mean=mean, std=std,
        per_phase_precision=[_nanmean(c) for c in prec.T],
        per_phase_recall=[_nanmean(c) for c in rec.T],
        n_videos=len(reports), missed_phase_count=sum(len(r.missed_phases) for r in reports),
        level="videos", members=[r.video_id for r in reports],
    )


def aggregate_folds(fold_reports) -> AggregateReport:
    """Second level: average fold means and fold stds over folds."""
    fold_reports = list(fold_reports)
    if not fold_reports:
        raise ValueError("need at least one fold report")
    mean = {k: _nanmean([fr.mean[k] for fr in fold_reports]) for k in SCALAR_METRICS}
    std = {k: _nanmean([fr.std[k] for fr in fold_reports]) for k in SCALAR_METRICS}
    mean["f1"] = f1(mean["avg_precision"], mean["avg_recall"])
    M = len(fold_reports[0].per_phase_precision)
    return AggregateReport(
        mean=mean, std=std,
        per_phase_precision=[_nanmean([fr.per_phase_precision[p] for fr in fold_reports]) for p in range(M)],
        per_phase_recall=[_nanmean([fr.per_phase_recall[p] for fr in fold_reports]) for p in range(M)],
        n_videos=sum(fr.n_videos for fr in fold_reports),
        missed_phase_count=sum(fr.missed_phase_count for fr in fold_reports),
        level="folds", members=[f"fold{i}" for i in range(len(fold_reports))],
    )


# --- export -------------------------------------------------------------------

def metric_rows(reports):
    """Long-format rows ``(video_id, metric, value)``; per-phase lists expand to ``name[p]``."""
    rows = []
    for r in reports:
        for key, value in r.to_dict().items():
            if key == "video_id":
                continue
            if isinstance(value, list):
                if key == "missed_phases":
                    rows.append((r.video_id, key, " ".join(str(v) for v in value)))
                    continue
                for p, v in enumerate(value, start=1):
                    rows.append((r.video_id, f"{key}[{p}]", v))
            else:
                rows.append((r.video_id, key, value))
    return rows


def write_metrics(reports, aggregate_report, directory, stem="metrics"):
    """``<stem>.json`` (per-video objects + aggregate) and ``<stem>.csv`` (one row per video and metric)."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    doc = {"videos": [r.to_dict() for r in reports], "aggregate": aggregate_report.to_dict()}
    json_path = directory / f"{stem}.json"
    json_path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")
    csv_path = directory / f"{stem}.csv"
    with open(csv_path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["video_id", "metric", "value"])
        for vid, key, value in metric_rows(reports):
            w.writerow([vid, key, "" if value is None else value])
    return json_path, csv_path
