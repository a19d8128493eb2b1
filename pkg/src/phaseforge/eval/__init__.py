from .metrics import (
    accuracy, per_phase_precision_recall, f1, temporal_distance, noise_pct, causal_mode_filter,
    runs, evaluate_video, aggregate, aggregate_folds, MetricsReport, AggregateReport,
    metric_rows, write_metrics,
)
from .predict import PredictionTrace, predict_sequence, predict_labels_fast, predict_rsd
