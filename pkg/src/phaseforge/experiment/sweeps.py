"""Annotation-fraction and pre-training-amount studies over several folds."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..eval.metrics import f1
from ..parallel import map_ordered
from .config import ExperimentConfig, derive_seed
from .folds import subsample_annotated
from .protocol import FoldRun, pretrain, records_by_id, run_fold

ROW_METRICS = ("accuracy", "avg_precision", "avg_recall", "f1", "noise",
               "temporal_distance_first_mean", "temporal_distance_closest_mean")
# averaged over subsets then folds; f1 is recomputed from the averaged precision and recall
SUMMARY_METRICS = ("accuracy", "avg_precision", "avg_recall", "noise",
                   "temporal_distance_first_mean", "temporal_distance_closest_mean")


@dataclass
class SweepResult:
    kind: str
    rows: list
    summary: list
    deltas: list = field(default_factory=list)
    trend: dict = field(default_factory=dict)
    label_reads: dict = field(default_factory=dict)
    checkpoints: list = field(default_factory=list)


def _nanmean(vals) -> float:
    a = np.array(vals, dtype=np.float64)
    a = a[~np.isnan(a)]
    return float(a.mean()) if a.size else float("nan")


def _row(run: FoldRun, **ids) -> dict:
    row = dict(ids)
    row["pipeline"] = run.pipeline
    row["arch_tag"] = run.arch_tag
    row["n_test"] = run.report.n_videos
    for k in ROW_METRICS:
        row[k] = float(run.report.mean[k])
    row["accuracy_std"] = float(run.report.std["accuracy"])
    row["missed_phases"] = int(run.report.missed_phase_count)
    row["label_reads_pretrain"] = int(sum(run.label_reads.values()))
    return row


def summarize(rows, group_keys) -> list:
    """Average rows over subsets within each fold, then over folds."""
    groups = {}
    for r in rows:
        groups.setdefault(tuple(r[k] for k in group_keys), {}).setdefault(r["fold"], []).append(r)
    out = []
    for gkey in sorted(groups, key=lambda g: tuple(str(x) if isinstance(x, str) else x for x in g)):
        per_fold = groups[gkey]
        fold_means = {k: [_nanmean([r[k] for r in per_fold[f]]) for f in sorted(per_fold)]
                      for k in SUMMARY_METRICS}
        entry = dict(zip(group_keys, gkey))
        for k in SUMMARY_METRICS:
            entry[k] = _nanmean(fold_means[k])
        entry["f1"] = f1(entry["avg_precision"], entry["avg_recall"])
        entry["accuracy_fold_std"] = float(np.std(fold_means["accuracy"]))
        entry["n_folds"] = len(per_fold)
        entry["n_runs"] = sum(len(v) for v in per_fold.values())
        out.append(entry)
    return out


def fraction_deltas(summary) -> list:
    """Accuracy/F1 of every pre-trained mode at fraction f minus no pre-training at f'."""
    base = {s["fraction"]: s for s in summary if s["mode"] == "none"}
    out = []
    for s in summary:
        if s["mode"] == "none":
            continue
        for f2 in sorted(base):
            b = base[f2]
            out.append({"mode": s["mode"], "fraction": s["fraction"], "baseline_fraction": f2,
                        "delta_accuracy": s["accuracy"] - b["accuracy"], "delta_f1": s["f1"] - b["f1"]})
    return out


def annotation_cells(records, folds, cfg: ExperimentConfig, fractions=None) -> list:
    """(fold, fraction, subset, cell key, labeled ids) for every sweep point."""
    by_id = records_by_id(records)
    fractions = tuple(cfg.fractions if fractions is None else fractions)
    cells = []
    for fold in folds:
        durations = {v: by_id[v].duration for v in fold.train_ids}
        for frac in fractions:
            for s in range(cfg.n_subsets(frac)):
                cell = f"fold{fold.fold_id}/frac{frac:g}/sub{s}"
                labeled = subsample_annotated(fold.train_ids, durations, frac, derive_seed(cfg.seed, cell, "subset"))
                cells.append((fold, frac, s, cell, labeled))
    return cells


def run_annotation_sweep(records, folds, cfg: ExperimentConfig, out_dir=None, modes=None,
                         fractions=None, pipeline=None, progress=None) -> SweepResult:
    """Every (fold, fraction, subset, mode) point; pre-training always uses all fold training videos.

    Pre-training depends only on (fold, mode), so it runs once per pair and
    is shared by all fractions and subsets. Subsets are drawn independently
    per fraction, and the same subset is used for every mode.
    """
    by_id = records_by_id(records)
    modes = tuple(cfg.modes if modes is None else modes)
    pipeline = pipeline or cfg.pipeline
    jobs = [(fold, m) for fold in folds for m in modes]
    pre_list = map_ordered(lambda j: pretrain(by_id, j[0].train_ids, j[1], cfg,
                                              f"fold{j[0].fold_id}/pretrain-{j[1]}", out_dir), jobs)
    pre = {(j[0].fold_id, j[1]): p for j, p in zip(jobs, pre_list)}
    tasks = [(c, m) for c in annotation_cells(by_id, folds, cfg, fractions) for m in modes]

    def one(task):
        (fold, frac, s, cell, labeled), mode = task
        run = run_fold(by_id, fold, mode, cfg, pipeline=pipeline, labeled_ids=labeled,
                       pretrained=pre[(fold.fold_id, mode)], cell=cell, out_dir=out_dir)
        if progress is not None:
            progress(f"{run.key}: accuracy {run.report.mean['accuracy']:.2f}")
        return run

    runs = map_ordered(one, tasks)
    rows = []
    for ((fold, frac, s, cell, labeled), mode), run in zip(tasks, runs):
        rows.append(_row(run, fold=fold.fold_id, fraction=frac, subset=s, mode=mode, cell=cell,
                         seed=derive_seed(cfg.seed, cell), n_labeled=len(labeled),
                         n_pretrain=len(fold.train_ids) if mode != "none" else 0,
                         labeled_ids=" ".join(labeled)))
    summary = summarize(rows, ("mode", "fraction"))
    reads = {f"fold{k[0]}/{k[1]}/{stage}": n for k, p in pre.items() for stage, n in p.label_reads.items()}
    ckpts = sorted({c for r in runs for c in r.checkpoints})
    return SweepResult("annotation", rows, summary, fraction_deltas(summary), label_reads=reads,
                       checkpoints=ckpts)


def amount_split(fold, cfg: ExperimentConfig, finetune_videos=None):
    """(fine-tune ids, ordered pre-training pool) for one fold; pools are nested prefixes."""
    k = cfg.finetune_videos if finetune_videos is None else finetune_videos
    ids = list(fold.train_ids)
    rng = np.random.default_rng(derive_seed(cfg.seed, f"fold{fold.fold_id}/amount", "split"))
    perm = [ids[i] for i in rng.permutation(len(ids))]
    finetune = tuple(v for v in ids if v in set(perm[:k]))
    return finetune, tuple(perm[k:])


def trend_statistics(amounts, accuracies) -> dict:
    a = np.asarray(amounts, dtype=np.float64)
    y = np.asarray(accuracies, dtype=np.float64)
    slope = float(np.polyfit(a, y, 1)[0]) if a.size >= 2 and np.ptp(a) > 0 else float("nan")
    return {"slope_per_video": slope, "monotone_non_decreasing": bool(np.all(np.diff(y) >= 0)),
            "gain_max_vs_zero": float(y[-1] - y[0]) if y.size else float("nan")}


def run_pretrain_amount_sweep(records, folds, cfg: ExperimentConfig, amounts=None, finetune_videos=None,
                              out_dir=None, pipeline=None, progress=None) -> SweepResult:
    """Fixed labeled fine-tune set per fold; RSD pre-training on growing disjoint video pools.

    Amount 0 is the no-pre-training baseline. All amounts of a fold share
    the cell key, so their fine-tuning seeds coincide and only the
    pre-training differs.
    """
    by_id = records_by_id(records)
    amounts = tuple(cfg.pretrain_amounts if amounts is None else amounts)
    pipeline = pipeline or cfg.pipeline
    tasks = []
    for fold in folds:
        finetune, pool = amount_split(fold, cfg, finetune_videos)
        for a in amounts:
            if a > len(pool):
                raise ValueError(f"amount {a} exceeds the {len(pool)} videos left after fine-tune selection")
            pre_ids = pool[:a]
            if set(pre_ids) & set(finetune):
                raise AssertionError("pre-training and fine-tuning videos overlap")
            tasks.append((fold, a, finetune, pre_ids))

    def one(task):
        fold, a, finetune, pre_ids = task
        cell = f"fold{fold.fold_id}/amount"
        mode = "none" if a == 0 else "rsd"
        pre = pretrain(by_id, pre_ids, mode, cfg, f"{cell}/pretrain-{a}", out_dir)
        run = run_fold(by_id, fold, mode, cfg, pipeline=pipeline, labeled_ids=finetune, pretrain_ids=pre_ids,
                       pretrained=pre, cell=cell, tag=f"{cell}/{mode}-{a}", out_dir=out_dir)
        if progress is not None:
            progress(f"{cell} amount {a}: accuracy {run.report.mean['accuracy']:.2f}")
        return run

    runs = map_ordered(one, tasks)
    rows = []
    for (fold, a, finetune, pre_ids), run in zip(tasks, runs):
        rows.append(_row(run, fold=fold.fold_id, amount=a, mode=run.mode, cell=f"fold{fold.fold_id}/amount",
                         seed=derive_seed(cfg.seed, f"fold{fold.fold_id}/amount"), n_labeled=len(finetune),
                         n_pretrain=len(pre_ids), labeled_ids=" ".join(finetune)))
    summary = summarize(rows, ("amount",))
    trend = trend_statistics([s["amount"] for s in summary], [s["accuracy"] for s in summary])
    reads = {f"fold{t[0].fold_id}/amount{t[1]}/{stage}": n
             for t, r in zip(tasks, runs) for stage, n in r.label_reads.items()}
    ckpts = sorted({c for r in runs for c in r.checkpoints})
    return SweepResult("pretrain_amount", rows, summary, trend=trend, label_reads=reads, checkpoints=ckpts)
