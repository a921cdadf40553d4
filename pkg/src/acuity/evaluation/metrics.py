"""Ranking and confusion metrics, Youden thresholds and the SOFA baseline.

Positive class is ``unstable`` (label 1) for the headline metrics; per-class
and macro variants are always reported alongside.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np
from scipy.stats import rankdata

SOFA_MAX = 24.0


class UndefinedMetric(ValueError):
    pass


def _check_binary(labels) -> np.ndarray:
    y = np.asarray(labels)
    if not np.isin(y, (0, 1)).all():
        raise ValueError("labels must be 0/1")
    return y.astype(np.int64)


def auc(scores, labels) -> float:
    """Mann-Whitney AUC with ties credited 0.5 (equals the trapezoidal ROC area)."""
    s = np.asarray(scores, dtype=np.float64)
    y = _check_binary(labels)
    n_pos = int(y.sum())
    n_neg = y.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise UndefinedMetric("AUC undefined: labels contain a single class")
    ranks = rankdata(s, method="average")
    # rank sums are half-integers, so u is exact in float64 for any realistic n
    u = ranks[y == 1].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def roc_points(scores, labels) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """(fpr, tpr, thresholds) with predictions ``score >= threshold``, starting at (0, 0)."""
    s = np.asarray(scores, dtype=np.float64)
    y = _check_binary(labels)
    order = np.argsort(-s, kind="mergesort")
    s, y = s[order], y[order]
    distinct = np.r_[np.flatnonzero(np.diff(s)), s.size - 1]
    tp = np.cumsum(y)[distinct]
    fp = (distinct + 1) - tp
    n_pos, n_neg = y.sum(), y.size - y.sum()
    tpr = np.r_[0.0, tp / n_pos] if n_pos else np.r_[0.0, np.zeros(tp.size)]
    fpr = np.r_[0.0, fp / n_neg] if n_neg else np.r_[0.0, np.zeros(fp.size)]
    return fpr, tpr, np.r_[np.inf, s[distinct]]


def _ratio(num: int, den: int) -> float | None:
    return None if den == 0 else num / den


@dataclass
class MetricSet:
    auc: float | None
    precision: float | None
    sensitivity: float | None
    specificity: float | None
    f1: float | None
    precision_stable: float | None
    f1_stable: float | None
    macro_precision: float
    macro_recall: float
    macro_f1: float
    tp: int = 0
    fp: int = 0
    fn: int = 0
    tn: int = 0

    def as_dict(self) -> dict[str, float | None]:
        return {k: v for k, v in asdict(self).items() if k not in ("tp", "fp", "fn", "tn")}


METRIC_NAMES = ("auc", "precision", "sensitivity", "specificity", "f1", "precision_stable", "f1_stable",
                "macro_precision", "macro_recall", "macro_f1")


def confusion_counts(predictions, labels) -> tuple[int, int, int, int]:
    p = _check_binary(predictions)
    y = _check_binary(labels)
    tp = int(np.sum((p == 1) & (y == 1)))
    fp = int(np.sum((p == 1) & (y == 0)))
    fn = int(np.sum((p == 0) & (y == 1)))
    tn = int(np.sum((p == 0) & (y == 0)))
    return tp, fp, fn, tn


def confusion_metrics(predictions, labels, scores=None) -> MetricSet:
    """Confusion-derived metrics; zero denominators give None.

    Macro variants average the two classes and count an undefined per-class
    value as 0 so that they are always defined.
    """
    tp, fp, fn, tn = confusion_counts(predictions, labels)
    precision = _ratio(tp, tp + fp)
    sensitivity = _ratio(tp, tp + fn)
    specificity = _ratio(tn, tn + fp)
    f1 = _ratio(2 * tp, 2 * tp + fp + fn)
    precision_stable = _ratio(tn, tn + fn)
    f1_stable = _ratio(2 * tn, 2 * tn + fn + fp)
    zero = lambda v: 0.0 if v is None else v
    area = None
    if scores is not None:
        try:
            area = auc(scores, labels)
        except UndefinedMetric:
            area = None
    return MetricSet(
        auc=area, precision=precision, sensitivity=sensitivity, specificity=specificity, f1=f1,
        precision_stable=precision_stable, f1_stable=f1_stable,
        macro_precision=(zero(precision) + zero(precision_stable)) / 2,
        macro_recall=(zero(sensitivity) + zero(specificity)) / 2,
        macro_f1=(zero(f1) + zero(f1_stable)) / 2,
        tp=tp, fp=fp, fn=fn, tn=tn,
    )


def youden_threshold(scores, labels) -> tuple[float, float]:
    """Observed score maximising J = sensitivity + specificity - 1 for ``score >= t``.

    Ties in J go to the largest threshold.  Returns (threshold, J).
    """
    s = np.asarray(scores, dtype=np.float64)
    y = _check_binary(labels)
    n_pos = int(y.sum())
    n_neg = y.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise UndefinedMetric("Youden threshold undefined: labels contain a single class")
    values = np.unique(s)[::-1]  # descending
    order = np.argsort(-s, kind="mergesort")
    s_sorted, y_sorted = s[order], y[order]
    # number of samples with score >= each candidate threshold
    at_or_above = np.searchsorted(-s_sorted, -values, side="right")
    cum_pos = np.r_[0, np.cumsum(y_sorted)]
    tp = cum_pos[at_or_above]
    fp = at_or_above - tp
    tn = n_neg - fp
    j = tp / n_pos + tn / n_neg - 1.0
    best = int(np.argmax(j))  # first maximum in descending order = largest threshold
    return float(values[best]), float(j[best])


@dataclass
class BaselineResult:
    threshold: float
    youden_j: float | None
    scores: np.ndarray
    labels: np.ndarray
    predictions: np.ndarray
    metrics: MetricSet
    kept: np.ndarray  # indices of windows with a SOFA value
    n_dropped: int


def sofa_scores(sofa) -> tuple[np.ndarray, np.ndarray]:
    """(normalised scores, kept indices); missing SOFA (None/NaN/negative) is dropped."""
    raw = np.array([np.nan if v is None else float(v) for v in sofa], dtype=np.float64)
    kept = np.flatnonzero(np.isfinite(raw) & (raw >= 0))
    return raw[kept] / SOFA_MAX, kept


def sofa_baseline(sofa, labels, threshold: float | None = None) -> BaselineResult:
    """score = SOFA / 24; predict unstable iff score >= tau (Youden-optimal unless given)."""
    scores, kept = sofa_scores(sofa)
    y = _check_binary(labels)[kept]
    j = None
    if threshold is None:
        threshold, j = youden_threshold(scores, y)
    predictions = (scores >= threshold).astype(np.int64)
    return BaselineResult(threshold, j, scores, y, predictions, confusion_metrics(predictions, y, scores),
                          kept, len(sofa) - kept.size)
