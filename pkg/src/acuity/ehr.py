"""Demographic encoding and 4-hour clinical aggregation into fixed-length vectors."""
from __future__ import annotations

from collections import Counter
from dataclasses import dataclass

import numpy as np

from .datamodel import (COGNITIVE_STATES, ETHNICITIES, NUMERIC_CLINICAL, RACES, SEXES,
                        ClinicalEvent, PatientRecord)
from .signal import DegenerateChannel

DEMOGRAPHIC_NUMERIC = ("age", "height", "weight", "length_of_stay")
DEMOGRAPHIC_FEATURES = (DEMOGRAPHIC_NUMERIC + tuple(f"sex_{s}" for s in SEXES)
                        + tuple(f"race_{r}" for r in RACES) + tuple(f"ethnicity_{e}" for e in ETHNICITIES))
CLINICAL_FEATURES = NUMERIC_CLINICAL + tuple(f"cognitive_{c}" for c in COGNITIVE_STATES)
SEVERITY = {state: rank for rank, state in enumerate(COGNITIVE_STATES)}  # coma > delirium > normal


@dataclass(frozen=True)
class MinMaxScale:
    names: tuple[str, ...]
    minimum: tuple[float, ...]
    maximum: tuple[float, ...]

    def __post_init__(self):
        for name, lo, hi in zip(self.names, self.minimum, self.maximum):
            if not hi > lo:
                raise DegenerateChannel(f"{name}: max {hi} <= min {lo}")

    def apply(self, values) -> np.ndarray:
        lo, hi = np.asarray(self.minimum), np.asarray(self.maximum)
        return np.clip((np.asarray(values, dtype=np.float64) - lo) / (hi - lo), 0.0, 1.0)


def _one_hot(value: str, levels: tuple[str, ...]) -> list[float]:
    return [1.0 if value == level else 0.0 for level in levels]


def _demographic_numerics(p: PatientRecord) -> list[float]:
    return [p.age, p.height, p.weight, p.length_of_stay]


def fit_demographic_scale(dev_patients: list[PatientRecord]) -> MinMaxScale:
    values = np.array([_demographic_numerics(p) for p in dev_patients], dtype=np.float64)
    if values.size == 0:
        raise ValueError("no development patients")
    return MinMaxScale(DEMOGRAPHIC_NUMERIC, tuple(values.min(axis=0)), tuple(values.max(axis=0)))


def encode_demographics(p: PatientRecord, scale: MinMaxScale) -> np.ndarray:
    """11-vector: scaled age/height/weight/LOS, then one-hot sex, race, ethnicity."""
    return np.concatenate([scale.apply(_demographic_numerics(p)), _one_hot(p.sex, SEXES),
                           _one_hot(p.race, RACES), _one_hot(p.ethnicity, ETHNICITIES)])


def majority_vote(states) -> str | None:
    """Most frequent cognitive state; ties go to the more severe state."""
    counts = Counter(states)
    if not counts:
        return None
    return max(counts, key=lambda s: (counts[s], SEVERITY[s]))


def events_in_window(events: list[ClinicalEvent], assessment_time: float, window_hours: float = 4.0):
    start = assessment_time - window_hours * 3600.0
    return [e for e in events if start <= e.time < assessment_time]


def raw_clinical_summary(window_events: list[ClinicalEvent]) -> tuple[dict[str, float | None], str | None]:
    """Per-kind arithmetic means (None when absent) and the majority cognitive state."""
    sums = {k: [] for k in NUMERIC_CLINICAL}
    states = []
    for e in window_events:
        if e.kind == "cognitive_status":
            states.append(e.categorical_value)
        else:
            sums[e.kind].append(e.numeric_value)
    means = {k: (float(np.mean(v)) if v else None) for k, v in sums.items()}
    return means, majority_vote(states)


@dataclass(frozen=True)
class ClinicalScale:
    scale: MinMaxScale
    fill: tuple[float, ...]  # dev population mean per numeric kind, raw units
    cognitive_fill: str


def fit_clinical_scale(dev_summaries) -> ClinicalScale:
    """Fit on development-window summaries from :func:`raw_clinical_summary`."""
    lo, hi, fill = [], [], []
    for kind in NUMERIC_CLINICAL:
        vals = [m[kind] for m, _ in dev_summaries if m[kind] is not None]
        if not vals:
            raise DegenerateChannel(f"{kind}: no development observations")
        lo.append(min(vals))
        hi.append(max(vals))
        fill.append(float(np.mean(vals)))
    states = [s for _, s in dev_summaries if s is not None]
    cognitive_fill = majority_vote(states) or "normal"
    return ClinicalScale(MinMaxScale(NUMERIC_CLINICAL, tuple(lo), tuple(hi)), tuple(fill), cognitive_fill)


def aggregate_clinical(window_events: list[ClinicalEvent], scale: ClinicalScale) -> np.ndarray:
    """8-vector: scaled window means of the five numeric kinds, one-hot cognitive status.

    Missing kinds take the development mean (numeric) or majority state.
    """
    return encode_clinical_summary(raw_clinical_summary(window_events), scale)


def encode_clinical_summary(summary, scale: ClinicalScale) -> np.ndarray:
    means, state = summary
    raw = [means[k] if means[k] is not None else f for k, f in zip(NUMERIC_CLINICAL, scale.fill)]
    return np.concatenate([scale.scale.apply(raw), _one_hot(state or scale.cognitive_fill, COGNITIVE_STATES)])
