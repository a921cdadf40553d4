"""Evaluation protocol: grouped splits, training, metrics, SOFA baseline, bootstrap."""
from ..datamodel import EvalReport, MetricSummary
from .bootstrap import N_BOOTSTRAP, bootstrap_indices, bootstrap_report
from .metrics import (METRIC_NAMES, BaselineResult, MetricSet, UndefinedMetric, auc,
                      confusion_counts, confusion_metrics, roc_points, sofa_baseline, sofa_scores,
                      youden_threshold)
from .split import SplitError, SplitPlan, check_disjoint, make_split
from .training import (ArraySet, TrainingDiverged, TrainResult, predict_logits, train,
                       train_fixed)

__all__ = [
    "EvalReport", "MetricSummary", "N_BOOTSTRAP", "bootstrap_indices", "bootstrap_report",
    "METRIC_NAMES", "BaselineResult", "MetricSet", "UndefinedMetric", "auc", "confusion_counts",
    "confusion_metrics", "roc_points", "sofa_baseline", "sofa_scores", "youden_threshold",
    "SplitError", "SplitPlan", "check_disjoint", "make_split", "ArraySet", "TrainingDiverged",
    "TrainResult", "predict_logits", "train", "train_fixed",
]
