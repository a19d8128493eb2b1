"""``phaseforge`` command line.

Every subcommand takes ``--config FILE``, ``--seed N``, ``--out DIR``,
``--paper-scale`` and repeated ``--set key=value`` overrides (applied
after the file). Exit codes: 0 success, 1 configuration or usage error,
2 stage failure. ``PHASEFORGE_THREADS`` caps worker threads.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import jsonschema

from .eval.metrics import aggregate, evaluate_video, write_metrics
from .eval.predict import predict_sequence
from .experiment.config import ConfigError, load_config
from .experiment.folds import split_finetune_pool
from .experiment.protocol import (
    StageError, build_dataset, build_folds, pretrain, records_by_id, stage_context,
)
from .experiment.report import emit_report, read_report, validate_report, write_document
from .experiment.sweeps import run_annotation_sweep, run_pretrain_amount_sweep
from .nn.params import (
    ENDON2N_UPDATED, ENDON2N_VANILLA, PHASE_ENCODER, PROGRESS_ENCODER, RSD_PROGRESS, TEMPCON,
    load_checkpoint, save_checkpoint,
)
from .parallel import map_ordered
from .synth import load_dataset, save_dataset
from .train.gradcheck import sequence_gradcheck
from .train.pipelines import (
    TrainLog, base_model, labeled_frames, train_endolstm, train_endon2n, train_phase_encoder,
)
from .train.transfer import transfer_weights

log = logging.getLogger("phaseforge")

EXIT_OK, EXIT_CONFIG, EXIT_STAGE = 0, 1, 2


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_CONFIG, f"{self.prog}: error: {message}\n")


def _common() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(add_help=False)
    p.add_argument("--config", type=Path, help="flat key = value config file")
    p.add_argument("--seed", type=int, help="root seed (overrides the config)")
    p.add_argument("--out", type=Path, default=Path("runs"), help="output directory")
    p.add_argument("--paper-scale", action="store_true", help="start from the 4-fold paper profile")
    p.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                   help="config override, repeatable")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def _data_args(p, split="train"):
    p.add_argument("--data", type=Path, help="dataset directory (default: generate from the config)")
    p.add_argument("--fold", type=int, default=0, help="fold whose ids are used (default 0)")
    p.add_argument("--videos", help="comma-separated video ids (overrides --fold)")
    p.add_argument("--split", default=split, choices=("train", "val", "test"))


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="phaseforge", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    common = _common()

    p = sub.add_parser("generate", parents=[common], help="write the synthetic dataset and folds")
    p = sub.add_parser("pretrain-rsd", parents=[common], help="progress encoder + RSD pre-training")
    _data_args(p)
    p = sub.add_parser("pretrain-tempcon", parents=[common], help="siamese frame-order pre-training")
    _data_args(p)
    p = sub.add_parser("train-phase", parents=[common], help="frame-level phase fine-tuning")
    _data_args(p)
    p.add_argument("--init", type=Path, help="pre-trained checkpoint to transfer the encoder from")
    p.add_argument("--all-videos", action="store_true", help="skip the 75 percent encoder split")
    p = sub.add_parser("train-endon2n", parents=[common], help="end-to-end encoder-LSTM training")
    _data_args(p)
    p.add_argument("--encoder", type=Path, required=True, help="phase-encoder checkpoint")
    p.add_argument("--rsd", type=Path, help="RSD checkpoint: train the updated (time-input) variant")
    p = sub.add_parser("train-endolstm", parents=[common], help="two-step frozen-encoder baseline")
    _data_args(p)
    p.add_argument("--encoder", type=Path, required=True, help="phase-encoder checkpoint")
    p = sub.add_parser("evaluate", parents=[common], help="metrics of a trained model")
    _data_args(p, split="test")
    p.add_argument("--model", type=Path, required=True, help="endon2n checkpoint")
    p = sub.add_parser("sweep", parents=[common], help="annotation-fraction or pre-training-amount study")
    p.add_argument("--data", type=Path, help="dataset directory (default: generate from the config)")
    p.add_argument("--kind", choices=("annotation", "amount"), default="annotation",
                   help="annotation fractions (default) or pre-training amounts")
    p = sub.add_parser("gradcheck", parents=[common], help="finite-difference check of the sequence gradients")
    p.add_argument("--tolerance", type=float, default=1e-5)
    p = sub.add_parser("report", parents=[common], help="validate a results.json and print its summary")
    p.add_argument("--results", type=Path, required=True)
    p.add_argument("--emit", action="store_true", help="re-emit JSON/CSV files into --out")
    return parser


# --- helpers ---------------------------------------------------------------------

def _overrides(items):
    out = {}
    for item in items:
        key, sep, value = item.partition("=")
        if not sep:
            raise ConfigError(f"--set expects KEY=VALUE, got {item!r}")
        out[key.strip()] = value.strip()
    return out


def _records(args, cfg):
    if getattr(args, "data", None) is not None:
        if not (args.data / "manifest.json").exists():
            raise ConfigError(f"{args.data}: no dataset manifest")
        return load_dataset(args.data)
    return build_dataset(cfg)


def _select(args, cfg, records):
    by_id = records_by_id(records)
    folds = build_folds(cfg, list(by_id))
    if args.fold < 0 or args.fold >= len(folds):
        raise ConfigError(f"--fold {args.fold} out of range (0..{len(folds) - 1})")
    fold = folds[args.fold]
    if args.videos:
        ids = tuple(v.strip() for v in args.videos.split(",") if v.strip())
        unknown = set(ids) - set(by_id)
        if unknown:
            raise ConfigError(f"unknown video ids {sorted(unknown)}")
    else:
        ids = getattr(fold, f"{args.split}_ids")
    return by_id, fold, ids


def _load(path, variants, what):
    try:
        store = load_checkpoint(path)
    except (OSError, ValueError) as e:
        raise ConfigError(f"{what}: {e}") from e
    if store.spec.variant not in variants:
        raise ConfigError(f"{what}: expected one of {variants}, got a {store.spec.variant} checkpoint")
    return store


def _save(store, out, stage, tlog=None):
    path = save_checkpoint(store, Path(out) / f"{stage}-{store.iteration}.ckpt")
    if tlog is not None and tlog.rows:
        tlog.write_csv(Path(out) / f"{stage}-log.csv")
    print(path)
    return path


# --- commands --------------------------------------------------------------------

def cmd_generate(args, cfg):
    records = build_dataset(cfg)
    save_dataset(records, args.out, cfg.workflow)
    folds = build_folds(cfg, [r.video_id for r in records])
    (args.out / "folds.json").write_text(json.dumps([f.to_dict() for f in folds], indent=2) + "\n")
    print(f"{len(records)} videos and {len(folds)} folds written to {args.out}")


def cmd_pretrain(args, cfg, mode):
    by_id, _, ids = _select(args, cfg, _records(args, cfg))
    key = f"pretrain-{mode}"
    result = pretrain(by_id, ids, mode, cfg, key, args.out)
    for p in result.checkpoints:
        print(p)
    print(json.dumps({"label_reads": result.label_reads}))


def cmd_train_phase(args, cfg):
    by_id, _, ids = _select(args, cfg, _records(args, cfg))
    spec = cfg.arch(PHASE_ENCODER)
    if args.init is not None:
        src = _load(args.init, (RSD_PROGRESS, TEMPCON, PROGRESS_ENCODER, PHASE_ENCODER), "--init")
    with stage_context("phase_encoder", "cli"):
        pool = ids if args.all_videos else split_finetune_pool(ids, cfg.seed)
        if args.init is None:
            init = base_model(spec, cfg.seed)
        else:
            init = transfer_weights(src, spec, cfg.seed)
        X, y = labeled_frames([by_id[v] for v in pool])
        tlog = TrainLog()
        store = train_phase_encoder(X, y, cfg.stage("phase_encoder"), init, seed=cfg.seed, log=tlog)
    _save(store, args.out, "phase_encoder", tlog)


def cmd_train_endon2n(args, cfg):
    by_id, fold, ids = _select(args, cfg, _records(args, cfg))
    phase = _load(args.encoder, (PHASE_ENCODER,), "--encoder")
    rsd = _load(args.rsd, (RSD_PROGRESS,), "--rsd") if args.rsd else None
    with stage_context("endon2n", "cli"):
        if rsd is not None:
            spec = phase.spec.with_variant(ENDON2N_UPDATED)
            init = transfer_weights(phase, spec, base=transfer_weights(rsd, spec, cfg.seed))
        else:
            init = transfer_weights(phase, phase.spec.with_variant(ENDON2N_VANILLA), cfg.seed)
        tlog = TrainLog()
        model, history = train_endon2n([by_id[v] for v in ids], cfg.stage("endon2n"), init,
                                       [by_id[v] for v in fold.val_ids if v not in ids], seed=cfg.seed, log=tlog)
    _save(model, args.out, "endon2n", tlog)


def cmd_train_endolstm(args, cfg):
    by_id, fold, ids = _select(args, cfg, _records(args, cfg))
    phase = _load(args.encoder, (PHASE_ENCODER,), "--encoder")
    with stage_context("endolstm", "cli"):
        tlog = TrainLog()
        model, _ = train_endolstm([by_id[v] for v in ids], cfg.stage("endolstm"), phase,
                                  [by_id[v] for v in fold.val_ids if v not in ids], seed=cfg.seed, log=tlog)
    _save(model, args.out, "endolstm", tlog)


def cmd_evaluate(args, cfg):
    by_id, _, ids = _select(args, cfg, _records(args, cfg))
    model = _load(args.model, (ENDON2N_VANILLA, ENDON2N_UPDATED), "--model")
    with stage_context("evaluate", "cli"):
        recs = [by_id[v] for v in ids]
        traces = map_ordered(lambda r: predict_sequence(model, r), recs)
        videos = [evaluate_video(t.labels, r.phase_labels, model.spec.num_phases, r.fps, r.video_id,
                                 cfg.filter_window, cfg.undefined_precision) for t, r in zip(traces, recs)]
        agg = aggregate(videos)
    write_metrics(videos, agg, args.out)
    print(f"accuracy {agg.mean['accuracy']:.2f} +- {agg.std['accuracy']:.2f}  f1 {agg.mean['f1']:.2f}")


def cmd_sweep(args, cfg):
    records = _records(args, cfg)
    folds = build_folds(cfg, [r.video_id for r in records])
    runner = run_annotation_sweep if args.kind == "annotation" else run_pretrain_amount_sweep
    result = runner(records, folds, cfg, out_dir=args.out / "checkpoints", progress=log.info)
    for p in emit_report(result, cfg, args.out):
        print(p)
    _print_summary(result.summary)


def _print_summary(summary):
    for s in summary:
        keys = " ".join(f"{k}={s[k]}" for k in ("mode", "fraction", "amount") if k in s)
        print(f"{keys}: accuracy {s['accuracy']:.2f}  f1 {s['f1']:.2f}  runs {s['n_runs']}")


def cmd_gradcheck(args, cfg):
    worst = 0.0
    for variant in (ENDON2N_VANILLA, ENDON2N_UPDATED, RSD_PROGRESS):
        res = sequence_gradcheck(variant, seed=cfg.seed)
        worst = max(worst, res["max_rel_error"])
        print(f"{variant}: max relative error {res['max_rel_error']:.3e} "
              f"(seed {res['seed']}, kink margin {res['margin']:.2e}, {res['n_params']} params)")
    if worst > args.tolerance:
        raise StageError("gradcheck", "cli", ValueError(f"max relative error {worst:.3e} > {args.tolerance:g}"))


def cmd_report(args, cfg):
    try:
        doc = json.loads(args.results.read_text())
        validate_report(doc)
    except (OSError, ValueError) as e:
        raise ConfigError(f"{args.results}: {e}") from e
    except jsonschema.ValidationError as e:
        raise ConfigError(f"{args.results}: schema violation: {e.message}") from e
    print(f"{doc['kind']} report, config {doc['config_hash'][:12]}, {len(doc['rows'])} runs")
    _print_summary(read_report(args.results)["summary"])
    if args.emit:
        for p in write_document(doc, args.out):
            print(p)


COMMANDS = {
    "generate": cmd_generate,
    "pretrain-rsd": lambda a, c: cmd_pretrain(a, c, "rsd"),
    "pretrain-tempcon": lambda a, c: cmd_pretrain(a, c, "tempcon"),
    "train-phase": cmd_train_phase,
    "train-endon2n": cmd_train_endon2n,
    "train-endolstm": cmd_train_endolstm,
    "evaluate": cmd_evaluate,
    "sweep": cmd_sweep,
    "gradcheck": cmd_gradcheck,
    "report": cmd_report,
}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(message)s")
    try:
        cfg = load_config(args.config, paper_scale=args.paper_scale, seed=args.seed,
                          overrides=_overrides(args.overrides))
        COMMANDS[args.command](args, cfg)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except FileNotFoundError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except StageError as e:
        print(f"stage failure: {e}", file=sys.stderr)
        return EXIT_STAGE
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
