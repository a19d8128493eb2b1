import json
import math
from dataclasses import replace
from pathlib import Path

import jsonschema
import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from phaseforge.experiment import (
    ConfigError, FoldSpec, StageError, annotation_cells, amount_split, apply_pairs, build_dataset,
    build_folds, check_hygiene, derive_seed, emit_report, fraction_deltas, load_config, make_folds,
    paper_config, pretrain, read_csv_rows, read_report, rows_equal, run_annotation_sweep, run_fold,
    run_pretrain_amount_sweep, split_finetune_pool, subsample_annotated, summarize, toy_config,
    validate_report,
)
from phaseforge.experiment import protocol
from phaseforge.nn import ENDON2N_UPDATED, ENDON2N_VANILLA, load_checkpoint
from phaseforge.records import LabelAccessError

from conftest import micro_config, micro_config_text


# --- seeds and config -------------------------------------------------------------

def test_derive_seed_matches_documented_formula():
    expect = np.random.SeedSequence([7] + list(b"fold0/frac25/sub1")).generate_state(1, np.uint32)[0]
    assert derive_seed(7, "fold0", "frac25", "sub1") == int(expect)
    assert derive_seed(7, "fold0/frac25/sub1") == derive_seed(7, "fold0", "frac25", "sub1")
    assert derive_seed(7, "a") != derive_seed(8, "a")
    assert derive_seed(7, "a") != derive_seed(7, "b")


def test_profiles():
    toy = toy_config()
    assert (toy.n_folds, toy.n_train, toy.n_val, toy.n_test) == (2, 24, 4, 8)
    assert toy.fractions == (25, 50, 100) and toy.n_subsets(25) == 2 and toy.n_subsets(100) == 1
    paper = paper_config()
    assert (paper.n_videos, paper.n_folds, paper.n_train, paper.n_val, paper.n_test) == (120, 4, 80, 10, 30)
    assert paper.fractions == (10, 20, 25, 40, 50, 80, 100)
    assert paper.n_subsets(10) == 4 and paper.n_subsets(80) == 2 and paper.n_subsets(100) == 1
    assert paper.stage("endon2n").subseq_len == 500 and paper.stage("endon2n").pad_to == 6000
    toy.validate()
    paper.validate()


def test_config_file_parsing(tmp_path):
    path = tmp_path / "exp.cfg"
    path.write_text(
        "# comment line\n"
        "seed = 11\n"
        "folds.val = 3   ; trailing comment\n"
        "endon2n.alpha = 2e-3\n"
        "endon2n.step_size = none\n"
        "workflow.phase_duration_mean = 10,20,30,40,50,60,70\n"
        "sweep.subsets = 25:3, 50:2\n"
        "eval.filter_window = none\n"
    )
    cfg = load_config(path)
    assert cfg.seed == 11 and cfg.n_val == 3
    assert cfg.stage("endon2n").alpha == 2e-3 and cfg.stage("endon2n").step_size is None
    assert cfg.stage("endon2n").optimizer == "adam"
    assert cfg.workflow.phase_duration_mean == (10.0, 20.0, 30.0, 40.0, 50.0, 60.0, 70.0)
    assert cfg.subsets == {25: 3, 50: 2} and cfg.filter_window is None
    # explicit overrides and --seed win over the file
    cfg2 = load_config(path, seed=3, overrides={"folds.val": "2"})
    assert (cfg2.seed, cfg2.n_val) == (3, 2)
    # a section header is accepted too
    path.write_text("[phaseforge]\nseed = 5\n")
    assert load_config(path).seed == 5


def test_profile_key_and_paper_scale(tmp_path):
    path = tmp_path / "p.cfg"
    path.write_text("profile = paper\nseed = 4\n")
    cfg = load_config(path)
    assert cfg.profile == "paper" and cfg.n_train == 80 and cfg.seed == 4
    assert load_config(None, paper_scale=True).n_folds == 4


@pytest.mark.parametrize("text", [
    "nonsense.key = 1\n",
    "endon2n.not_a_field = 1\n",
    "folds.train = many\n",
    "endon2n.optimizer = rmsprop\n",
    "sweep.fractions = 0, 50\n",
    "sweep.modes = none, magic\n",
    "folds.train = 40\n",
    "sweep.subsets = 25\n",
    "profile = huge\n",
    "this line has no separator\n",
])
def test_config_errors(tmp_path, text):
    path = tmp_path / "bad.cfg"
    path.write_text(text)
    with pytest.raises(ConfigError):
        load_config(path)


def test_config_hash():
    a = toy_config()
    assert a.config_hash() == toy_config().config_hash()
    assert len(a.config_hash()) == 64
    assert apply_pairs(a, {"endon2n.alpha": "2e-3"}).config_hash() != a.config_hash()
    assert replace(a, seed=1).config_hash() != a.config_hash()


# --- folds and subsampling ----------------------------------------------------------

def test_toy_folds():
    cfg = toy_config()
    ids = [f"v{i:03d}" for i in range(36)]
    folds = build_folds(cfg, ids)
    assert len(folds) == 2
    for f in folds:
        assert (len(f.train_ids), len(f.val_ids), len(f.test_ids)) == (24, 4, 8)
        assert not set(f.train_ids) & set(f.test_ids) and not set(f.val_ids) & set(f.test_ids)
        assert not set(f.train_ids) & set(f.val_ids)
    assert not set(folds[0].test_ids) & set(folds[1].test_ids)
    assert build_folds(cfg, ids) == folds


def test_paper_folds_partition_test_sets():
    ids = [f"v{i:03d}" for i in range(120)]
    folds = make_folds(ids, 4, 80, 10, 30, seed=1)
    tests = [set(f.test_ids) for f in folds]
    assert set().union(*tests) == set(ids) and sum(len(t) for t in tests) == 120
    for f in folds:
        assert len(set(f.train_ids) | set(f.val_ids) | set(f.test_ids)) == 120


def test_fold_errors():
    with pytest.raises(ValueError):
        FoldSpec(0, ["a", "b"], ["b"], ["c"]).validate()
    with pytest.raises(ValueError):
        FoldSpec(0, ["a"], ["b"], ["z"]).validate(["a", "b", "c"])
    with pytest.raises(ValueError):
        make_folds([f"v{i}" for i in range(10)], 3, 4, 1, 4, seed=0)


def _oracle_quartile(ids, durations):
    """Quartile index of each id from a plain duration sort (n divisible by 4)."""
    n = len(ids)
    order = sorted(range(n), key=lambda i: (durations[i], ids[i]))
    q = {}
    for rank, i in enumerate(order):
        q[ids[i]] = rank * 4 // n
    return q


def test_subsample_paper_sizes_and_quartiles():
    rng = np.random.default_rng(0)
    ids = [f"v{i:03d}" for i in range(80)]
    dur = rng.uniform(1000, 5000, 80)
    quart = _oracle_quartile(ids, dur)
    sizes = {}
    for frac in (10, 20, 25, 40, 50, 80, 100):
        sub = subsample_annotated(ids, dur, frac, seed=3)
        sizes[frac] = len(sub)
        counts = np.bincount([quart[v] for v in sub], minlength=4)
        assert counts.max() - counts.min() <= 1
        assert len(set(sub)) == len(sub) and set(sub) <= set(ids)
    assert sizes == {10: 8, 20: 16, 25: 20, 40: 32, 50: 40, 80: 64, 100: 80}
    sub = subsample_annotated(ids, dur, 10, seed=3)
    assert np.bincount([quart[v] for v in sub], minlength=4).tolist() == [2, 2, 2, 2]


def test_subsample_identity_determinism_and_errors():
    ids = [f"v{i:02d}" for i in range(24)]
    dur = {v: float(i % 7) for i, v in enumerate(ids)}
    assert subsample_annotated(ids, dur, 100, seed=1) == tuple(ids)
    assert subsample_annotated(ids, dur, 25, seed=1) == subsample_annotated(ids, dur, 25, seed=1)
    assert subsample_annotated(ids, dur, 25, seed=1) != subsample_annotated(ids, dur, 25, seed=2)
    with pytest.raises(ValueError):
        subsample_annotated(ids, dur, 120, seed=0)
    with pytest.raises(ValueError):
        subsample_annotated(ids, dur, 0, seed=0)
    with pytest.raises(ValueError):
        subsample_annotated(ids[:3], [1, 2, 3], 50, seed=0)
    with pytest.raises(ValueError):
        subsample_annotated(ids, [1.0, 2.0], 50, seed=0)


@settings(max_examples=60, deadline=None)
@given(st.integers(4, 60), st.integers(1, 99), st.integers(0, 2**31))
def test_subsample_stratified_property(n, frac, seed):
    ids = [f"v{i:03d}" for i in range(n)]
    dur = np.random.default_rng(seed).uniform(1, 100, n)
    size = math.floor(frac * n / 100 + 0.5)
    if size < 1:
        with pytest.raises(ValueError):
            subsample_annotated(ids, dur, frac, seed)
        return
    sub = subsample_annotated(ids, dur, frac, seed)
    assert len(sub) == size
    # quartiles by rank: np.array_split sizes over the duration sort
    order = sorted(range(n), key=lambda i: (dur[i], ids[i]))
    bounds = np.cumsum([len(c) for c in np.array_split(np.arange(n), 4)])
    rank = {ids[i]: r for r, i in enumerate(order)}
    counts = np.bincount([int(np.searchsorted(bounds, rank[v], side="right")) for v in sub], minlength=4)
    assert counts.max() - counts.min() <= 1


def test_split_finetune_pool():
    ids = [f"v{i:02d}" for i in range(80)]
    assert len(split_finetune_pool(ids, 0)) == 60
    assert len(split_finetune_pool(ids[:8], 0)) == 6
    assert len(split_finetune_pool(ids[:6], 0)) == 5  # 4.5 rounds half up
    assert split_finetune_pool(ids, 4) == split_finetune_pool(ids, 4)
    assert set(split_finetune_pool(ids, 4)) <= set(ids)
    with pytest.raises(ValueError):
        split_finetune_pool(ids[:3], 0)


# --- run_fold -------------------------------------------------------------------------

@pytest.fixture(scope="module")
def fold_runs(micro, tmp_path_factory):
    cfg, records, folds = micro
    out = tmp_path_factory.mktemp("runs")
    runs = {m: run_fold(records, folds[0], m, cfg, out_dir=out / "a") for m in ("none", "rsd", "tempcon")}
    again = run_fold(records, folds[0], "none", cfg, out_dir=out / "b")
    return cfg, records, folds, runs, again, out


def test_run_fold_none_populates_report(fold_runs):
    cfg, records, folds, runs, _, _ = fold_runs
    run = runs["none"]
    assert run.report.n_videos == len(folds[0].test_ids)
    assert [v.video_id for v in run.videos] == list(folds[0].test_ids)
    for key in ("accuracy", "avg_precision", "avg_recall", "f1", "noise"):
        assert math.isfinite(run.report.mean[key])
    assert len(run.report.per_phase_precision) == cfg.workflow.num_phases
    stages = sorted(Path(p).name.rsplit("-", 1)[0] for p in run.checkpoints)
    assert stages == ["endon2n", "phase_encoder"]
    assert (Path(run.checkpoints[0]).parent / "metrics.json").exists()


def test_run_fold_rerun_bit_identical(fold_runs):
    _, _, _, runs, again, out = fold_runs
    assert runs["none"].report.to_dict() == again.report.to_dict()
    for a, b in zip(runs["none"].checkpoints, again.checkpoints):
        assert Path(a).read_bytes() == Path(b).read_bytes()


def test_arch_tags_by_mode(fold_runs):
    _, _, _, runs, _, _ = fold_runs
    def final(run):
        return load_checkpoint([p for p in run.checkpoints if "endon2n-" in Path(p).name][0])
    assert final(runs["rsd"]).arch_tag == ENDON2N_UPDATED
    assert final(runs["none"]).arch_tag == ENDON2N_VANILLA
    assert final(runs["tempcon"]).arch_tag == ENDON2N_VANILLA
    names = {m: sorted(Path(p).name.rsplit("-", 1)[0] for p in r.checkpoints) for m, r in runs.items()}
    assert names["rsd"] == ["endon2n", "phase_encoder", "progress_encoder", "rsd"]
    assert names["tempcon"] == ["endon2n", "phase_encoder", "tempcon"]


def test_fold_hygiene_and_label_reads(fold_runs):
    _, _, folds, runs, _, _ = fold_runs
    test = set(folds[0].test_ids)
    for run in runs.values():
        for stage, ids in run.stage_videos.items():
            assert not set(ids) & test, stage
    assert runs["rsd"].label_reads == {"progress_encoder": 0, "pretrain-rsd": 0}
    assert runs["tempcon"].label_reads == {"pair-sampling": 0, "pretrain-tempcon": 0}
    assert runs["rsd"].stage_videos["pretrain-rsd"] == folds[0].train_ids


def test_hygiene_violations_are_stage_errors(micro):
    cfg, records, folds = micro
    fold = folds[0]
    leak = fold.train_ids[:3] + fold.test_ids[:1]
    with pytest.raises(StageError) as err:
        run_fold(records, fold, "none", cfg, labeled_ids=leak)
    assert err.value.stage == "hygiene"
    with pytest.raises(ValueError):
        check_hygiene(fold, fold.train_ids, fold.val_ids)


def test_stage_failure_is_tagged(micro):
    cfg, records, folds = micro
    with pytest.raises(StageError) as err:
        run_fold(records, folds[0], "none", cfg, labeled_ids=folds[0].train_ids[:2])
    assert err.value.stage == "phase_encoder" and "fold0/none" in str(err.value)


def test_label_reading_pretraining_is_caught(micro, monkeypatch):
    cfg, records, folds = micro

    def leaky(recs, *a, **k):
        return recs[0].phase_labels

    monkeypatch.setattr(protocol, "pretrain_rsd", leaky)
    with pytest.raises(StageError) as err:
        pretrain(records, folds[0].train_ids, "rsd", cfg, "leak")
    assert err.value.stage == "pretrain-rsd"
    assert isinstance(err.value.cause, LabelAccessError)


# --- sweeps ---------------------------------------------------------------------------

@pytest.fixture(scope="module")
def sweep(micro, tmp_path_factory):
    cfg, records, folds = micro
    out = tmp_path_factory.mktemp("sweep")
    return cfg, records, folds, run_annotation_sweep(records, folds, cfg, out_dir=out), out


def test_sweep_row_count(sweep):
    cfg, _, folds, res, _ = sweep
    per_fold = sum(cfg.n_subsets(f) for f in cfg.fractions)
    assert len(res.rows) == len(folds) * per_fold * len(cfg.modes)
    full = [r for r in res.rows if r["fraction"] == 100]
    assert len(full) == len(folds) * len(cfg.modes)
    for mode in cfg.modes:
        for f in folds:
            assert sum(1 for r in full if r["mode"] == mode and r["fold"] == f.fold_id) == 1


def test_sweep_shares_subsets_across_modes_and_pretrains_on_all_train(sweep):
    cfg, _, folds, res, _ = sweep
    by_cell = {}
    for r in res.rows:
        by_cell.setdefault(r["cell"], set()).add(r["labeled_ids"])
    assert all(len(v) == 1 for v in by_cell.values())
    for r in res.rows:
        assert r["n_pretrain"] == (0 if r["mode"] == "none" else cfg.n_train)
        assert r["label_reads_pretrain"] == 0
        assert r["arch_tag"] == (ENDON2N_UPDATED if r["mode"] == "rsd" else ENDON2N_VANILLA)
    assert set(res.label_reads.values()) == {0}


def test_sweep_summary_and_deltas(sweep):
    cfg, _, folds, res, _ = sweep
    assert res.summary == summarize(res.rows, ("mode", "fraction"))
    assert len(res.deltas) == (len(cfg.modes) - 1) * len(cfg.fractions) ** 2
    s = {(e["mode"], e["fraction"]): e for e in res.summary}
    for d in res.deltas:
        a, b = s[(d["mode"], d["fraction"])], s[("none", d["baseline_fraction"])]
        assert d["delta_accuracy"] == a["accuracy"] - b["accuracy"]


def test_summary_averages_subsets_then_folds():
    rows = [
        {"fold": 0, "mode": "none", "fraction": 50, "accuracy": 80.0, "avg_precision": 60.0,
         "avg_recall": 40.0, "noise": 1.0, "temporal_distance_first_mean": 1.0,
         "temporal_distance_closest_mean": float("nan")},
        {"fold": 0, "mode": "none", "fraction": 50, "accuracy": 90.0, "avg_precision": 70.0,
         "avg_recall": 50.0, "noise": 3.0, "temporal_distance_first_mean": 3.0,
         "temporal_distance_closest_mean": 2.0},
        {"fold": 1, "mode": "none", "fraction": 50, "accuracy": 70.0, "avg_precision": 80.0,
         "avg_recall": 60.0, "noise": 5.0, "temporal_distance_first_mean": 5.0,
         "temporal_distance_closest_mean": 4.0},
    ]
    (s,) = summarize(rows, ("mode", "fraction"))
    # fold means 85 and 70 -> 77.5 (pooling all three rows would give 80)
    assert s["accuracy"] == 77.5
    assert s["avg_precision"] == 72.5 and s["avg_recall"] == 52.5
    assert s["f1"] == pytest.approx(2 * 72.5 * 52.5 / 125.0, rel=1e-15)
    assert s["temporal_distance_closest_mean"] == 3.0
    assert s["accuracy_fold_std"] == 7.5
    assert (s["n_folds"], s["n_runs"]) == (2, 3)
    d = fraction_deltas([s, {**s, "mode": "rsd", "accuracy": 80.0, "f1": 60.0}])
    assert d == [{"mode": "rsd", "fraction": 50, "baseline_fraction": 50, "delta_accuracy": 2.5,
                  "delta_f1": 60.0 - s["f1"]}]


def test_annotation_cells_use_fold_training_videos(micro):
    cfg, records, folds = micro
    for fold, frac, s, cell, labeled in annotation_cells(records, folds, cfg):
        assert set(labeled) <= set(fold.train_ids)
        assert len(labeled) == math.floor(frac * len(fold.train_ids) / 100 + 0.5)


def test_amount_sweep(micro, tmp_path):
    cfg, records, folds = micro
    res = run_pretrain_amount_sweep(records, folds[:1], cfg, out_dir=tmp_path)
    assert [r["amount"] for r in res.rows] == list(cfg.pretrain_amounts)
    finetune, pool = amount_split(folds[0], cfg)
    assert not set(finetune) & set(pool) and len(finetune) == cfg.finetune_videos
    assert set(finetune) | set(pool) == set(folds[0].train_ids)
    zero = res.rows[0]
    assert zero["mode"] == "none" and zero["n_pretrain"] == 0
    assert res.rows[1]["mode"] == "rsd" and res.rows[1]["n_pretrain"] == 2
    # amount 0 is exactly the no-pre-training run on the same fine-tune set
    base = run_fold(records, folds[0], "none", cfg, labeled_ids=finetune, cell="fold0/amount")
    assert zero["accuracy"] == base.report.mean["accuracy"]
    assert zero["f1"] == base.report.mean["f1"]
    assert set(res.trend) == {"slope_per_video", "monotone_non_decreasing", "gain_max_vs_zero"}
    with pytest.raises(ValueError):
        run_pretrain_amount_sweep(records, folds[:1], cfg, amounts=(0, 5))


# --- report -------------------------------------------------------------------------

def test_report_round_trip(sweep, tmp_path):
    cfg, _, _, res, _ = sweep
    paths = emit_report(res, cfg, tmp_path)
    assert sorted(p.name for p in paths) == ["deltas.csv", "results.csv", "results.json", "summary.csv"]
    doc = read_report(tmp_path / "results.json")
    assert rows_equal(doc["rows"], res.rows)
    assert rows_equal(doc["summary"], res.summary)
    assert rows_equal(doc["deltas"], res.deltas)
    assert doc["config_hash"] == cfg.config_hash() and doc["seeds"]["root"] == cfg.seed
    assert all(doc["seeds"]["cells"][r["cell"]] == r["seed"] for r in res.rows)
    csv_rows = read_csv_rows(tmp_path / "results.csv")
    assert len(csv_rows) == len(res.rows)
    assert rows_equal(csv_rows, [{k: r[k] for k in doc["columns"]} for r in res.rows])
    # deterministic serialization
    first = (tmp_path / "results.json").read_bytes()
    emit_report(res, cfg, tmp_path)
    assert (tmp_path / "results.json").read_bytes() == first


def test_report_schema(sweep, tmp_path):
    cfg, _, _, res, _ = sweep
    emit_report(res, cfg, tmp_path, formats=("json",))
    raw = json.loads((tmp_path / "results.json").read_text())
    validate_report(raw)
    bad = dict(raw, rows=[dict(raw["rows"][0], accuracy=140.0)])
    with pytest.raises(jsonschema.ValidationError):
        validate_report(bad)
    with pytest.raises(jsonschema.ValidationError):
        validate_report({k: v for k, v in raw.items() if k != "config_hash"})
    with pytest.raises(ValueError):
        emit_report(res, cfg, tmp_path, formats=("xml",))


def test_dataset_is_seeded():
    cfg = micro_config()
    a, b = build_dataset(cfg), build_dataset(cfg)
    assert all(x.same_as(y) for x, y in zip(a, b))
    c = build_dataset(replace(cfg, seed=1))
    assert not a[0].same_as(c[0])


def test_micro_config_text_round_trips(tmp_path):
    path = tmp_path / "micro.cfg"
    path.write_text(micro_config_text())
    assert load_config(path).config_hash() == micro_config().config_hash()
