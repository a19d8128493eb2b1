from .config import (
    ExperimentConfig, ConfigError, MODES, PIPELINES, PROFILES, derive_seed, toy_config, paper_config,
    load_config, read_pairs, apply_pairs,
)
from .folds import (
    FoldSpec, make_folds, duration_quartiles, subset_size, subsample_annotated, split_finetune_pool,
)
from .protocol import (
    StageError, Pretrained, FoldRun, build_dataset, build_folds, pretrain, run_fold, expected_arch,
    check_hygiene,
)
from .sweeps import (
    SweepResult, summarize, fraction_deltas, annotation_cells, run_annotation_sweep, amount_split,
    run_pretrain_amount_sweep, trend_statistics,
)
from .report import emit_report, write_document, read_report, read_csv_rows, rows_equal, validate_report, load_schema
