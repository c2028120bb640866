"""Low-FPR metrics, score files and experiment reports."""
from .metrics import (
    DeltaTable,
    RocCurve,
    ScoreSet,
    apply_threshold,
    auc,
    brier,
    compare_runs,
    evaluate_split_pair,
    pauc,
    roc_curve,
    select_threshold,
)

__all__ = [
    "DeltaTable",
    "RocCurve",
    "ScoreSet",
    "apply_threshold",
    "auc",
    "brier",
    "compare_runs",
    "evaluate_split_pair",
    "pauc",
    "roc_curve",
    "select_threshold",
]
