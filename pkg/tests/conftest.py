import pytest

from phaseforge.experiment import apply_pairs, build_dataset, build_folds, toy_config

# A protocol small enough to run every stage chain in about a second.
MICRO = {
    "data.n_videos": "14", "folds.train": "8", "folds.val": "2", "folds.test": "2",
    "workflow.phase_duration_mean": "8,8,8,8,8,8,8", "workflow.phase_duration_std": "2,2,2,2,2,2,2",
    "workflow.min_phase_duration": "3",
    "arch.encoder_widths": "12, 8", "arch.lstm_hidden": "8",
    "endon2n.epochs": "2", "endolstm.epochs": "2", "rsd.epochs": "2",
    "phase_encoder.iterations": "20", "progress_encoder.iterations": "20", "tempcon.pairs_per_video": "40",
    "sweep.modes": "none, rsd, tempcon", "sweep.fractions": "50, 100",
    "sweep.pretrain_amounts": "0, 2", "sweep.finetune_videos": "4",
}


def micro_config(seed=0):
    return apply_pairs(toy_config(seed), MICRO).validate()


def micro_config_text():
    return "\n".join(f"{k} = {v}" for k, v in MICRO.items()) + "\n"


@pytest.fixture(scope="session")
def micro():
    cfg = micro_config()
    records = build_dataset(cfg)
    folds = build_folds(cfg, [r.video_id for r in records])
    return cfg, records, folds


# One verdict line per acceptance criterion, printed after the run.
ACCEPTANCE = {}


def record_verdict(criterion: str, ok: bool, detail: str) -> None:
    ACCEPTANCE[criterion] = f"criterion {criterion:<3} {'PASS' if ok else 'FAIL'}  {detail}"
    assert ok, detail


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    key = lambda c: (int("".join(ch for ch in c if ch.isdigit())), c)
    for c in sorted(ACCEPTANCE, key=key):
        terminalreporter.write_line(ACCEPTANCE[c])
