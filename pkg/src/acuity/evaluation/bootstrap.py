"""Percentile bootstrap over the holdout set."""
from __future__ import annotations

import numpy as np

from ..datamodel import EvalReport, MetricSummary
from .metrics import METRIC_NAMES, confusion_metrics

N_BOOTSTRAP = 100


def bootstrap_indices(n: int, n_boot: int = N_BOOTSTRAP, seed: int = 0) -> np.ndarray:
    """n_boot x n sample indices drawn with replacement."""
    if n < 1:
        raise ValueError("bootstrap needs a nonempty test set")
    return np.random.default_rng(seed).integers(0, n, size=(n_boot, n))


def summarize(values) -> MetricSummary:
    vals = np.array([v for v in values if v is not None], dtype=np.float64)
    if vals.size == 0:
        return MetricSummary(None, None, None, 0)
    lo, hi = np.percentile(vals, [2.5, 97.5])
    return MetricSummary(float(np.median(vals)), float(lo), float(hi), int(vals.size))


def bootstrap_report(scores, labels, n: int = N_BOOTSTRAP, seed: int = 0, threshold: float = 0.5,
                     scenario: str = "", predictions=None, **meta) -> EvalReport:
    """Median and 95% percentile interval of every metric over ``n`` resamples.

    Predictions are ``score >= threshold`` unless given explicitly.  Resamples
    holding a single class are skipped and counted in ``n_skipped``.
    """
    s = np.asarray(scores, dtype=np.float64)
    y = np.asarray(labels, dtype=np.int64)
    p = (s >= threshold).astype(np.int64) if predictions is None else np.asarray(predictions, dtype=np.int64)
    if not (s.shape == y.shape == p.shape):
        raise ValueError("scores, labels and predictions must align")
    rows, skipped = [], 0
    for idx in bootstrap_indices(s.size, n, seed):
        yb = y[idx]
        if yb.min() == yb.max():
            skipped += 1
            continue
        rows.append(confusion_metrics(p[idx], yb, s[idx]).as_dict())
    metrics = {name: summarize(r[name] for r in rows) for name in METRIC_NAMES}
    point = confusion_metrics(p, y, s).as_dict()
    return EvalReport(scenario=scenario, seed=seed, metrics=metrics, bootstrap=rows, point=point,
                      n_bootstrap=n, n_skipped=skipped, threshold=float(threshold), **meta)
