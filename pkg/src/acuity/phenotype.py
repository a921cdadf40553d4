"""Stable/unstable labelling of assessment windows from life-support therapies."""
from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

from .datamodel import AcuityLabel, TherapyEvent

HOUR = 3600.0
WINDOW_TRIGGERS = {
    "vasopressor": "vasopressor",
    "mechanical_ventilation": "ventilation",
    "crrt": "crrt",
}
MASSIVE_TRANSFUSION_UNITS = 10


@dataclass(frozen=True)
class WindowLabel:
    assessment_time: float
    label: AcuityLabel
    triggers: frozenset = frozenset()
    sofa: int | None = None

    def __post_init__(self):
        if (self.label is AcuityLabel.UNSTABLE) != bool(self.triggers):
            raise ValueError(f"label {self.label.value} inconsistent with triggers {sorted(self.triggers)}")


def label_window(events: list[TherapyEvent], assessment_time: float, window_hours: float = 4.0,
                 transfusion_lookback_hours: float = 24.0) -> WindowLabel:
    """Label the window ending at ``assessment_time``.

    Death or discharge at or before the assessment excludes the window.
    Vasopressor, ventilation and CRRT count inside [a - window, a); massive
    transfusion is >= 10 units in [a - 24h, a].
    """
    a = assessment_time
    sofa = sofa_at(events, a)
    if any(e.kind == "death" and e.time <= a for e in events):
        return WindowLabel(a, AcuityLabel.EXCLUDED_DEAD, sofa=sofa)
    if any(e.kind == "discharge" and e.time <= a for e in events):
        return WindowLabel(a, AcuityLabel.EXCLUDED_DISCHARGED, sofa=sofa)

    start = a - window_hours * HOUR
    triggers = {WINDOW_TRIGGERS[e.kind] for e in events if e.kind in WINDOW_TRIGGERS and start <= e.time < a}
    lookback = a - transfusion_lookback_hours * HOUR
    units = sum(1 for e in events if e.kind == "transfusion_unit" and lookback <= e.time <= a)
    if units >= MASSIVE_TRANSFUSION_UNITS:
        triggers.add("massive_transfusion")
    label = AcuityLabel.UNSTABLE if triggers else AcuityLabel.STABLE
    return WindowLabel(a, label, frozenset(triggers), sofa)


def sofa_at(events: list[TherapyEvent], assessment_time: float, lookback_hours: float = 24.0) -> int | None:
    """Latest SOFA observation in [a - 24h, a], or None."""
    lo = assessment_time - lookback_hours * HOUR
    best = None
    for e in events:
        if e.kind == "sofa_observation" and lo <= e.time <= assessment_time:
            if best is None or e.time >= best.time:
                best = e
    return None if best is None else best.sofa_value


def label_patient(events: list[TherapyEvent], assessments, window_hours: float = 4.0) -> list[WindowLabel]:
    events = sorted(events, key=lambda e: e.time)
    return [label_window(events, a, window_hours) for a in assessments]


def write_label_audit(rows, path) -> Path:
    """``rows``: iterable of (patient_id, WindowLabel); one CSV line per window."""
    path = Path(path)
    with path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["patient_id", "assessment_time", "label", "triggers", "sofa"])
        for pid, wl in rows:
            writer.writerow([pid, repr(float(wl.assessment_time)), wl.label.value,
                             "|".join(sorted(wl.triggers)), "" if wl.sofa is None else wl.sofa])
    return path
