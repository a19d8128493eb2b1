"""Numbered acceptance criteria.

Each test records one PASS/FAIL verdict line that is printed in the
"acceptance criteria" section at the end of the pytest run. Criteria 8 and
10 share the first of two full toy annotation sweeps; together they take
most of the suite's wall time.
"""

import math
import time

import numpy as np
import pytest

import oracles
from conftest import record_verdict
from phaseforge.eval import (
    accuracy, causal_mode_filter, f1, noise_pct, per_phase_precision_recall, temporal_distance,
)
from phaseforge.experiment import (
    build_dataset, build_folds, emit_report, pretrain, run_annotation_sweep, run_fold, toy_config,
)
from phaseforge.nn import ENDON2N_UPDATED, ENDON2N_VANILLA, RSD_PROGRESS, ArchSpec, init_params, smooth_l1
from phaseforge.records import LabelAccessError, label_guard
from phaseforge.synth import WorkflowModel, derive_progress_labels, derive_rsd_labels, generate_surgery
from phaseforge.train import full_bptt_grads, make_sequence, sequence_gradcheck, toy_problem, truncated_bptt_grads

pytestmark = pytest.mark.acceptance

VARIANTS = (ENDON2N_VANILLA, ENDON2N_UPDATED, RSD_PROGRESS)
TOY_DIMS = dict(D=8, F=12, H=16, M=3, T=10)


def max_abs_diff(a, b) -> float:
    return max(float(np.max(np.abs(a[k] - b[k]))) for k in a)


# --- 1: gradient oracle ------------------------------------------------------------

def test_criterion_1_gradient_oracle():
    t0 = time.perf_counter()
    errs = {}
    for variant in VARIANTS:
        for seed in (0, 1):
            errs[variant, seed] = sequence_gradcheck(variant, seed, **TOY_DIMS)["max_rel_error"]
    elapsed = time.perf_counter() - t0
    worst = max(errs.values())
    record_verdict("1", worst <= 1e-5 and elapsed < 60,
                   f"max relative error {worst:.2e} over {len(errs)} nets (<= 1e-5), {elapsed:.1f} s (< 60 s)")


# --- 2: truncation identities ------------------------------------------------------

def test_criterion_2a_loss_invariant_to_subsequence_length():
    T = TOY_DIMS["T"]
    worst = 0.0
    for variant in VARIANTS:
        params, seq = toy_problem(variant, 0, **TOY_DIMS)
        full_loss, _ = full_bptt_grads(params, seq)
        for ell in (1, 7, 13, T):
            loss, _ = truncated_bptt_grads(params, seq, ell)
            worst = max(worst, abs(loss - full_loss))
    record_verdict("2a", worst <= 1e-12, f"max loss deviation {worst:.1e} for subseq_len in (1, 7, 13, T)")


def test_criterion_2b_long_subsequences_equal_full_bptt():
    T = TOY_DIMS["T"]
    equal = True
    for variant in VARIANTS:
        params, seq = toy_problem(variant, 0, **TOY_DIMS)
        full_loss, full = full_bptt_grads(params, seq)
        for ell in (T, T + 1, 4 * T):
            loss, grads = truncated_bptt_grads(params, seq, ell)
            equal &= loss == full_loss and all(np.array_equal(grads[k], full[k]) for k in full)
    record_verdict("2b", equal, "subseq_len >= T gradients bit-equal to full BPTT" if equal else "mismatch")


def _without_recurrence(variant, seed=0, close_forget_gate=True):
    params, seq = toy_problem(variant, seed, **TOY_DIMS)
    H = params.spec.lstm_hidden
    params.arrays["lstm.Wh"][...] = 0.0
    if close_forget_gate:
        # the cell state's self-connection is the other recurrent path
        params.arrays["lstm.Wx"][H:2 * H] = 0.0
        params.arrays["lstm.b"][H:2 * H] = -1e3
    return params, seq


def test_criterion_2c_zero_recurrence_equals_full_bptt():
    T = TOY_DIMS["T"]
    worst = 0.0
    for variant in VARIANTS:
        params, seq = _without_recurrence(variant)
        _, full = full_bptt_grads(params, seq)
        for ell in range(1, T + 3):
            _, grads = truncated_bptt_grads(params, seq, ell)
            worst = max(worst, max_abs_diff(grads, full))
    record_verdict("2c", worst <= 1e-12,
                   f"max gradient deviation {worst:.1e} for every subseq_len in 1..T+2 "
                   "(Wh = 0 and forget gate closed)")


@pytest.mark.xfail(strict=True, reason="Wh = 0 alone leaves the c_{t-1} -> c_t path through the forget gate")
def test_criterion_2c_literal_zero_wh_only():
    params, seq = _without_recurrence(ENDON2N_VANILLA, close_forget_gate=False)
    _, full = full_bptt_grads(params, seq)
    _, grads = truncated_bptt_grads(params, seq, 1)
    assert max_abs_diff(grads, full) <= 1e-12


# --- 3: smooth L1 -------------------------------------------------------------------

def test_criterion_3_smooth_l1_knee():
    ok = True
    for x in (1.0, -1.0):
        v, d = smooth_l1(x)
        ok &= 0.5 * x * x == abs(x) - 0.5 == v       # both value branches meet exactly
        ok &= x == math.copysign(1.0, x) == d          # both derivative branches meet exactly
        below = np.nextafter(x, 0.0)
        vb, db = smooth_l1(below)
        ok &= abs(vb - v) < 1e-15 and abs(db - d) < 1e-15
    ok &= smooth_l1(0.5) == (0.125, 0.5) and smooth_l1(2.0) == (1.5, 1.0)
    ok &= smooth_l1(-2.0) == (1.5, -1.0)
    record_verdict("3", ok, "branches agree at |x| = 1; values 0.125 at 0.5 and 1.5 at 2")


# --- 4: label generation -----------------------------------------------------------

def test_criterion_4_label_identities():
    model = WorkflowModel()
    worst, final_ok = 0.0, True
    for seed in range(100):
        r = generate_surgery(model, seed)
        total = r.duration / 60
        elapsed = r.elapsed_seconds() / 60
        worst = max(worst, float(np.max(np.abs(derive_rsd_labels(r, 5.0) * 5.0 + elapsed - total))))
        final_ok &= derive_progress_labels(r)[-1] == 1.0
    record_verdict("4", worst <= 1e-12 and final_ok,
                   f"max |rsd*s_norm + elapsed - total| {worst:.1e} min over 100 records; final progress exactly 1")


# --- 5: metric oracles -------------------------------------------------------------

def test_criterion_5_metric_oracles():
    rng = np.random.default_rng(2024)
    mismatches = 0
    for _ in range(1000):
        pred, gt = oracles.random_label_pair(rng, T=200)
        prec, rec, ap, ar = per_phase_precision_recall(pred, gt, 7)
        op, orr, oap, oar = oracles.precision_recall(pred, gt, 7)
        checks = [
            accuracy(pred, gt) == oracles.accuracy(pred, gt),
            [None if math.isnan(v) else v for v in prec] == op,
            [None if math.isnan(v) else v for v in rec] == orr,
            ap == oap and ar == oar,
            f1(ap, ar) == oracles.f1(oap, oar),
            noise_pct(pred, gt) == oracles.noise(pred, gt),
            np.array_equal(causal_mode_filter(pred, 5, 1.0), oracles.causal_mode(pred, 5)),
        ]
        for mode in ("first", "closest"):
            checks.append(temporal_distance(pred, gt, 1.0, mode) == oracles.temporal_distance(pred, gt, 1.0, mode))
        mismatches += not all(checks)
    worked = accuracy([1, 2, 2, 2], [1, 1, 2, 2]) == 75.0
    worked &= round(noise_pct([1, 1, 3, 2, 2, 2], [1, 1, 1, 2, 2, 2]), 2) == 16.67
    record_verdict("5", mismatches == 0 and worked,
                   f"{mismatches} oracle mismatches in 1000 pairs; worked examples 75% and 16.67% "
                   f"{'hold' if worked else 'FAIL'}")


# --- 6: padding ----------------------------------------------------------------------

def test_criterion_6_padding_is_exact():
    model = WorkflowModel()
    exact, n = True, 0
    for seed in range(3):
        rec = generate_surgery(model, seed)
        for variant, target in ((ENDON2N_VANILLA, "phase"), (ENDON2N_UPDATED, "phase"), (RSD_PROGRESS, "rsd")):
            spec = ArchSpec(variant, input_dim=rec.feature_dim, encoder_widths=(12, 8), lstm_hidden=8)
            params = init_params(spec, seed)
            a = make_sequence(rec, 5.0, None, target)
            b = make_sequence(rec, 5.0, 6000, target)
            for ell in (50, 6000):
                la, ga = truncated_bptt_grads(params, a, ell)
                lb, gb = truncated_bptt_grads(params, b, ell)
                exact &= la == lb and all(np.array_equal(ga[k], gb[k]) for k in ga)
                n += 1
    record_verdict("6", exact, f"padding to 6000 frames leaves loss and gradients bit-identical ({n} cases)")


# --- 7: learning smoke test --------------------------------------------------------

@pytest.fixture(scope="module")
def toy():
    cfg = toy_config()
    records = build_dataset(cfg)
    folds = build_folds(cfg, [r.video_id for r in records])
    return cfg, records, folds


def test_criterion_7_learning_smoke(toy, tmp_path):
    cfg, records, folds = toy
    t0 = time.perf_counter()
    run = run_fold(records, folds[0], "none", cfg, out_dir=tmp_path)
    elapsed = time.perf_counter() - t0
    acc = run.report.mean["accuracy"]
    record_verdict("7", acc >= 90.0 and elapsed <= 600,
                   f"EndoN2N without pre-training: {acc:.2f}% test accuracy (>= 90) on "
                   f"{len(folds[0].train_ids)} train / {len(folds[0].test_ids)} test videos in {elapsed:.0f} s (<= 600)")


# --- 8, 9, 10: the toy annotation sweep -------------------------------------------

def _sweep(toy, out_dir):
    cfg, records, folds = toy
    t0 = time.perf_counter()
    res = run_annotation_sweep(records, folds, cfg, out_dir=out_dir / "checkpoints")
    elapsed = time.perf_counter() - t0
    emit_report(res, cfg, out_dir)
    return res, elapsed


@pytest.fixture(scope="module")
def first_sweep(toy, tmp_path_factory):
    out = tmp_path_factory.mktemp("sweep-a")
    res, elapsed = _sweep(toy, out)
    return res, elapsed, out


def _accuracy(summary, mode, fraction):
    (s,) = [s for s in summary if s["mode"] == mode and s["fraction"] == fraction]
    return s["accuracy"]


def test_criterion_8_semi_supervised_trend(first_sweep):
    res, elapsed, _ = first_sweep
    rsd50 = _accuracy(res.summary, "rsd", 50)
    none100 = _accuracy(res.summary, "none", 100)
    n50 = sum(1 for r in res.rows if r["mode"] == "rsd" and r["fraction"] == 50)
    delta = rsd50 - none100
    record_verdict("8", abs(delta) <= 5.0 and elapsed <= 45 * 60,
                   f"rsd@50% {rsd50:.2f}% vs none@100% {none100:.2f}% (delta {delta:+.2f}, |delta| <= 5) "
                   f"over {n50} fold x subset runs; sweep {elapsed / 60:.1f} min (<= 45)")


def test_criterion_9_pretraining_reads_no_labels(toy, first_sweep, tmp_path):
    cfg, records, folds = toy
    res = first_sweep[0]
    rsd_reads = {k: v for k, v in res.label_reads.items() if "/rsd/" in k}
    tc = pretrain(records, folds[0].train_ids, "tempcon", cfg, "fold0/pretrain-tempcon", tmp_path)
    # the guards are live: a read inside one is caught and counted
    with pytest.raises(LabelAccessError):
        with label_guard("canary") as mon:
            records[0].phase_labels
    live = mon.reads == 1
    reads = list(rsd_reads.values()) + list(tc.label_reads.values())
    ok = live and bool(rsd_reads) and "pretrain-tempcon" in tc.label_reads and all(v == 0 for v in reads)
    record_verdict("9", ok, f"phase-label reads {sum(reads)} over {len(reads)} guarded pre-training stages "
                            f"({', '.join(sorted(rsd_reads))}, tempcon stages {sorted(tc.label_reads)})")


def _checkpoint_bytes(out):
    root = out / "checkpoints"
    return {str(p.relative_to(root)): p.read_bytes() for p in sorted(root.rglob("*.ckpt"))}


def test_criterion_10_determinism(toy, first_sweep, tmp_path_factory):
    _, _, out_a = first_sweep
    out_b = tmp_path_factory.mktemp("sweep-b")
    _sweep(toy, out_b)
    tables = ("results.json", "results.csv", "summary.csv", "deltas.csv")
    same_tables = all((out_a / t).read_bytes() == (out_b / t).read_bytes() for t in tables)
    ca, cb = _checkpoint_bytes(out_a), _checkpoint_bytes(out_b)
    same_ckpts = bool(ca) and ca == cb
    record_verdict("10", same_tables and same_ckpts,
                   f"result tables {'identical' if same_tables else 'DIFFER'}; "
                   f"{len(ca)} checkpoints {'bit-identical' if same_ckpts else 'DIFFER'}")
