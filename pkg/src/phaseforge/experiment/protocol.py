"""One cross-validation fold end to end: optional self-supervised
pre-training, phase fine-tuning, sequence training and test evaluation.

Stage chains per pre-training mode:

* ``none``: phase-encoder -> EndoN2N (vanilla)
* ``rsd``: progress-encoder -> RSD/progress pre-training -> phase-encoder
  -> EndoN2N (updated, LSTM and fc'_prog from the RSD net)
* ``tempcon``: frame pairs -> siamese pre-training -> phase-encoder
  -> EndoN2N (vanilla)

The ``endolstm`` pipeline replaces the last step by the two-step baseline.
Seeds come from :func:`derive_seed` with paths ``<cell>/pool`` for the
encoder fine-tuning split, ``<cell>/<mode>/<stage>`` for training stages
and ``<pretrain-key>/<stage>`` for pre-training. The generic encoder
weights every stage starts from use the path ``base``.
"""

from __future__ import annotations

import contextlib
from dataclasses import dataclass, field
from pathlib import Path

from ..eval.metrics import aggregate, evaluate_video, write_metrics
from ..eval.predict import predict_sequence
from ..nn.params import (
    ENDON2N_UPDATED, ENDON2N_VANILLA, PHASE_ENCODER, PROGRESS_ENCODER, TEMPCON, ParamStore,
    save_checkpoint,
)
from ..parallel import map_ordered
from ..records import label_guard
from ..synth import generate_dataset, sample_pair_arrays
from ..train.pipelines import (
    TrainLog, base_model, labeled_frames, pretrain_rsd, pretrain_tempcon, train_endolstm,
    train_endon2n, train_phase_encoder, train_progress_encoder,
)
from ..train.transfer import transfer_weights
from .config import MODES, PIPELINES, ExperimentConfig, derive_seed
from .folds import FoldSpec, make_folds, split_finetune_pool


class StageError(RuntimeError):
    """A protocol stage failed; ``stage`` and ``key`` say where."""

    def __init__(self, stage: str, key: str, cause: BaseException):
        self.stage, self.key, self.cause = stage, key, cause
        super().__init__(f"[{key}] stage {stage!r} failed: {type(cause).__name__}: {cause}")


@contextlib.contextmanager
def stage_context(stage: str, key: str):
    try:
        yield
    except StageError:
        raise
    except Exception as e:
        raise StageError(stage, key, e) from e


@dataclass
class Pretrained:
    mode: str
    key: str
    video_ids: tuple
    source: ParamStore | None = None     # store the phase encoder is transferred from
    label_reads: dict = field(default_factory=dict)
    checkpoints: list = field(default_factory=list)


@dataclass
class FoldRun:
    key: str
    mode: str
    pipeline: str
    report: object                       # AggregateReport over the test videos
    videos: list                         # per-video MetricsReport
    arch_tag: str
    label_reads: dict
    stage_videos: dict
    checkpoints: list = field(default_factory=list)
    model: ParamStore | None = None


def build_dataset(cfg: ExperimentConfig) -> list:
    """The configured synthetic dataset (seed path ``data``)."""
    return generate_dataset(cfg.workflow, cfg.n_videos, derive_seed(cfg.seed, "data"))


def build_folds(cfg: ExperimentConfig, video_ids) -> list:
    """The configured folds over ``video_ids`` (seed path ``folds``)."""
    return make_folds(video_ids, cfg.n_folds, cfg.n_train, cfg.n_val, cfg.n_test,
                      derive_seed(cfg.seed, "folds"))


def records_by_id(records) -> dict:
    if isinstance(records, dict):
        return records
    return {r.video_id: r for r in records}


def _save(store, directory, stage, saved):
    if directory is None:
        return
    path = save_checkpoint(store, Path(directory) / f"{stage}-{store.iteration}.ckpt")
    saved.append(str(path))


def _write_log(log, directory, stage):
    if directory is not None and log.rows:
        log.write_csv(Path(directory) / f"{stage}-log.csv")


def pretrain(records, video_ids, mode: str, cfg: ExperimentConfig, key: str, out_dir=None) -> Pretrained:
    """Label-free pre-training on ``video_ids``.

    Each stage runs inside a label guard that counts phase-label reads and
    raises on the first one, so a finished stage has provably read none.
    """
    if mode not in MODES:
        raise ValueError(f"unknown pre-training mode {mode!r}")
    by_id = records_by_id(records)
    ids = tuple(video_ids)
    result = Pretrained(mode, key, ids)
    if mode == "none":
        return result
    if not ids:
        raise StageError(f"pretrain-{mode}", key, ValueError("no pre-training videos"))
    recs = [by_id[v] for v in ids]
    root = cfg.seed
    ckpt_dir = None if out_dir is None else Path(out_dir) / key
    if mode == "rsd":
        with stage_context("progress_encoder", key), label_guard("progress_encoder") as mon:
            log = TrainLog()
            pe = train_progress_encoder(recs, cfg.stage("progress_encoder"),
                                        base_model(cfg.arch(PROGRESS_ENCODER), derive_seed(root, "base")),
                                        seed=derive_seed(root, key, "progress_encoder"), log=log)
        result.label_reads["progress_encoder"] = mon.reads
        _save(pe, ckpt_dir, "progress_encoder", result.checkpoints)
        _write_log(log, ckpt_dir, "progress_encoder")
        with stage_context("pretrain-rsd", key), label_guard("pretrain-rsd") as mon:
            log = TrainLog()
            rsd, _ = pretrain_rsd(recs, cfg.stage("rsd"), pe, seed=derive_seed(root, key, "rsd"), log=log)
        result.label_reads["pretrain-rsd"] = mon.reads
        _save(rsd, ckpt_dir, "rsd", result.checkpoints)
        _write_log(log, ckpt_dir, "rsd")
        result.source = rsd
    else:
        tc_cfg = cfg.stage("tempcon")
        with stage_context("pair-sampling", key), label_guard("pair-sampling") as mon:
            A, B, y = sample_pair_arrays(recs, tc_cfg.pairs_per_video, derive_seed(root, key, "pairs"))
        result.label_reads["pair-sampling"] = mon.reads
        with stage_context("pretrain-tempcon", key), label_guard("pretrain-tempcon") as mon:
            log = TrainLog()
            tc = pretrain_tempcon(A, B, y, tc_cfg, base_model(cfg.arch(TEMPCON), derive_seed(root, "base")),
                                  seed=derive_seed(root, key, "tempcon"), log=log)
        result.label_reads["pretrain-tempcon"] = mon.reads
        _save(tc, ckpt_dir, "tempcon", result.checkpoints)
        _write_log(log, ckpt_dir, "tempcon")
        result.source = tc
    return result


def expected_arch(mode: str, pipeline: str) -> str:
    return ENDON2N_UPDATED if (mode == "rsd" and pipeline == "endon2n") else ENDON2N_VANILLA


def check_hygiene(fold: FoldSpec, labeled_ids, pretrain_ids) -> None:
    train, test, val = set(fold.train_ids), set(fold.test_ids), set(fold.val_ids)
    for name, ids in (("labeled", labeled_ids), ("pre-training", pretrain_ids)):
        ids = set(ids)
        if ids & test:
            raise ValueError(f"fold {fold.fold_id}: test videos in the {name} set: {sorted(ids & test)}")
        if ids & val:
            raise ValueError(f"fold {fold.fold_id}: validation videos in the {name} set")
        if not ids <= train:
            raise ValueError(f"fold {fold.fold_id}: {name} ids outside the training split")


def run_fold(records, fold: FoldSpec, mode: str, cfg: ExperimentConfig, *, pipeline: str | None = None,
             labeled_ids=None, pretrain_ids=None, pretrained: Pretrained | None = None,
             cell: str | None = None, tag: str | None = None, out_dir=None,
             keep_model: bool = False) -> FoldRun:
    """Run the stage chain of ``mode`` on one fold and evaluate on its test videos.

    ``labeled_ids`` (default: all training videos) are the annotated videos;
    ``pretrain_ids`` (default: all training videos) feed the label-free
    stages. ``cell`` names the data selection and keys both the seeds and
    the checkpoint directory ``<out_dir>/<cell>/<mode>``; ``tag`` replaces
    that directory when runs sharing seeds must not share files.
    """
    pipeline = pipeline or cfg.pipeline
    if mode not in MODES:
        raise ValueError(f"unknown pre-training mode {mode!r}")
    if pipeline not in PIPELINES:
        raise ValueError(f"unknown pipeline {pipeline!r}")
    by_id = records_by_id(records)
    fold.validate(by_id.keys())
    cell = cell or f"fold{fold.fold_id}"
    key = f"{cell}/{mode}"
    labeled = tuple(fold.train_ids if labeled_ids is None else labeled_ids)
    pre_ids = tuple(fold.train_ids if pretrain_ids is None else pretrain_ids)
    with stage_context("hygiene", key):
        check_hygiene(fold, labeled, pre_ids if mode != "none" else ())
    root = cfg.seed
    ckpt_dir = None if out_dir is None else Path(out_dir) / (tag or key)

    if pretrained is None:
        pretrained = pretrain(by_id, pre_ids, mode, cfg, f"fold{fold.fold_id}/pretrain-{mode}", out_dir)
    elif pretrained.mode != mode or tuple(pretrained.video_ids) != pre_ids:
        raise ValueError("pretrained result does not match the requested mode/videos")
    checkpoints = list(pretrained.checkpoints)
    stage_videos = {}
    if mode != "none":
        stage_videos[f"pretrain-{mode}"] = pre_ids

    with stage_context("phase_encoder", key):
        pool = split_finetune_pool(labeled, derive_seed(root, cell, "pool"))
        spec = cfg.arch(PHASE_ENCODER)
        if pretrained.source is None:
            init = base_model(spec, derive_seed(root, "base"))
        else:
            init = transfer_weights(pretrained.source, spec, derive_seed(root, key, "phase_init"))
        X, y = labeled_frames([by_id[v] for v in pool])
        log = TrainLog()
        phase = train_phase_encoder(X, y, cfg.stage("phase_encoder"), init,
                                    seed=derive_seed(root, key, "phase_encoder"), log=log)
    stage_videos["phase_encoder"] = pool
    _save(phase, ckpt_dir, "phase_encoder", checkpoints)
    _write_log(log, ckpt_dir, "phase_encoder")

    train_recs = [by_id[v] for v in labeled]
    val_recs = [by_id[v] for v in fold.val_ids]
    with stage_context(pipeline, key):
        log = TrainLog()
        if pipeline == "endon2n":
            spec = cfg.arch(expected_arch(mode, pipeline))
            init_seed = derive_seed(root, key, "endon2n_init")
            if mode == "rsd":
                # LSTM and fc'_prog from the RSD net, encoder from phase fine-tuning
                init = transfer_weights(pretrained.source, spec, init_seed)
                init = transfer_weights(phase, spec, base=init)
            else:
                init = transfer_weights(phase, spec, init_seed)
            model, _ = train_endon2n(train_recs, cfg.stage("endon2n"), init, val_recs,
                                     seed=derive_seed(root, key, "endon2n"), log=log)
        else:
            model, _ = train_endolstm(train_recs, cfg.stage("endolstm"), phase, val_recs,
                                      seed=derive_seed(root, key, "endolstm"), log=log)
    stage_videos[pipeline] = labeled
    _save(model, ckpt_dir, pipeline, checkpoints)
    _write_log(log, ckpt_dir, pipeline)

    with stage_context("arch-check", key):
        want = expected_arch(mode, pipeline)
        if model.arch_tag != want:
            raise ValueError(f"mode {mode} produced a {model.arch_tag} model, expected {want}")

    with stage_context("evaluate", key):
        test_recs = [by_id[v] for v in fold.test_ids]
        traces = map_ordered(lambda r: predict_sequence(model, r), test_recs)
        videos = [evaluate_video(t.labels, r.phase_labels, cfg.workflow.num_phases, r.fps, r.video_id,
                                 cfg.filter_window, cfg.undefined_precision)
                  for t, r in zip(traces, test_recs)]
        report = aggregate(videos)
        if ckpt_dir is not None:
            write_metrics(videos, report, ckpt_dir)

    return FoldRun(key=tag or key, mode=mode, pipeline=pipeline, report=report, videos=videos,
                   arch_tag=model.arch_tag, label_reads=dict(pretrained.label_reads),
                   stage_videos=stage_videos, checkpoints=checkpoints,
                   model=model if keep_model else None)
