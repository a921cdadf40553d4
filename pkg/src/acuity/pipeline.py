"""Cohort -> labelled, scaled sample arrays (the model's unit of data).

Scaling parameters for accelerometry, demographics and clinical features are
fit on development patients only; the holdout is reachable solely through
:meth:`Dataset.holdout`, which counts every read.
"""
from __future__ import annotations

import json
import math
from collections import defaultdict
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import ehr, phenotype, signal
from .datamodel import AcuityLabel, Cohort
from .evaluation.split import SplitPlan, check_disjoint, make_split
from .evaluation.training import ArraySet

SCENARIOS = ("sofa", "accel", "accel+demo", "accel+clinical", "accel+demo+clinical")
SCENARIO_FUSION = {
    "accel": frozenset(),
    "accel+demo": frozenset({"demographics"}),
    "accel+clinical": frozenset({"clinical"}),
    "accel+demo+clinical": frozenset({"demographics", "clinical"}),
}


def check_scenario(scenario: str, allow_sofa: bool = True) -> str:
    if scenario not in SCENARIOS or (scenario == "sofa" and not allow_sofa):
        allowed = SCENARIOS if allow_sofa else SCENARIOS[1:]
        raise ValueError(f"unknown scenario {scenario!r}; expected one of {allowed}")
    return scenario


@dataclass(frozen=True)
class PreprocessConfig:
    window_hours: float = 4.0
    period_hours: float = 4.0
    min_coverage: float = signal.MIN_COVERAGE
    max_gap: float = signal.MAX_GAP_SECONDS
    dev_fraction: float = 0.7
    folds: int = 3
    stratify: bool = True


@dataclass(frozen=True)
class LabeledSample:
    window: signal.SampleWindow
    demographics: np.ndarray
    clinical: np.ndarray
    label: AcuityLabel
    patient_id: str
    assessment_time: float
    sofa: int | None


@dataclass
class Dataset:
    x: np.ndarray  # N x 3 x L, [0, 1]
    demographics: np.ndarray  # N x 11
    clinical: np.ndarray  # N x 8
    y: np.ndarray  # N
    patient: np.ndarray  # N (str)
    time: np.ndarray  # N
    sofa: np.ndarray  # N, NaN when missing
    plan: SplitPlan
    meta: dict = field(default_factory=dict)
    holdout_reads: int = 0

    def __post_init__(self):
        self._decimated: dict[int, np.ndarray] = {1: self.x}
        self.is_dev = np.array([self.plan.partition.get(p) == "dev" for p in self.patient], dtype=bool)
        self.fold = np.array([self.plan.folds.get(p, -1) for p in self.patient], dtype=np.int64)

    def __len__(self) -> int:
        return int(self.y.size)

    # --- views ---------------------------------------------------------------------------
    def windows(self, factor: int = 1) -> np.ndarray:
        if factor not in self._decimated:
            self._decimated[factor] = signal.decimate_array(self.x, factor)
        return self._decimated[factor]

    def ehr(self, scenario: str) -> np.ndarray | None:
        fusion = SCENARIO_FUSION[check_scenario(scenario, allow_sofa=False)]
        parts = []
        if "demographics" in fusion:
            parts.append(self.demographics)
        if "clinical" in fusion:
            parts.append(self.clinical)
        return np.concatenate(parts, axis=1) if parts else None

    def _arrays(self, idx: np.ndarray, scenario: str, factor: int) -> ArraySet:
        e = self.ehr(scenario)
        return ArraySet(self.windows(factor)[idx], self.y[idx], None if e is None else e[idx], self.patient[idx])

    def dev_indices(self) -> np.ndarray:
        return np.flatnonzero(self.is_dev)

    def dev(self, scenario: str, factor: int = 1) -> ArraySet:
        return self._arrays(self.dev_indices(), scenario, factor)

    def fold_sets(self, fold: int, scenario: str, factor: int = 1) -> tuple[ArraySet, ArraySet]:
        train_idx = np.flatnonzero(self.is_dev & (self.fold != fold))
        val_idx = np.flatnonzero(self.is_dev & (self.fold == fold))
        check_disjoint(self.patient[train_idx], self.patient[val_idx], self.patient[~self.is_dev])
        return self._arrays(train_idx, scenario, factor), self._arrays(val_idx, scenario, factor)

    def holdout(self, scenario: str, factor: int = 1) -> ArraySet:
        self.holdout_reads += 1
        return self._arrays(np.flatnonzero(~self.is_dev), scenario, factor)

    def holdout_sofa(self) -> tuple[np.ndarray, np.ndarray]:
        self.holdout_reads += 1
        idx = np.flatnonzero(~self.is_dev)
        return self.sofa[idx], self.y[idx]

    def dev_sofa(self) -> tuple[np.ndarray, np.ndarray]:
        idx = self.dev_indices()
        return self.sofa[idx], self.y[idx]

    def samples(self):
        for i in range(len(self)):
            sofa = None if math.isnan(self.sofa[i]) else int(self.sofa[i])
            yield LabeledSample(signal.SampleWindow(str(self.patient[i]), float(self.time[i]), self.x[i]),
                                self.demographics[i], self.clinical[i],
                                AcuityLabel.UNSTABLE if self.y[i] else AcuityLabel.STABLE,
                                str(self.patient[i]), float(self.time[i]), sofa)

    # --- persistence -------------------------------------------------------------------------
    def save(self, path) -> Path:
        path = Path(path)
        with path.open("wb") as fh:
            np.savez(fh, x=self.x, demographics=self.demographics, clinical=self.clinical, y=self.y,
                     patient=self.patient.astype(str), time=self.time, sofa=self.sofa,
                     plan=np.array(self.plan.to_json()), meta=np.array(json.dumps(self.meta, sort_keys=True)))
        return path

    @classmethod
    def load(cls, path) -> "Dataset":
        with np.load(path, allow_pickle=False) as z:
            return cls(z["x"], z["demographics"], z["clinical"], z["y"], z["patient"].astype(str), z["time"],
                       z["sofa"], SplitPlan.from_json(str(z["plan"])), json.loads(str(z["meta"])))


def assessment_times(trace_end: float, period_hours: float, slack: float = signal.MAX_GAP_SECONDS) -> list[float]:
    period = period_hours * 3600.0
    n = int(math.floor((trace_end + slack) / period + 1e-9))
    return [k * period for k in range(1, n + 1)]


def label_cohort(cohort: Cohort, cfg: PreprocessConfig):
    """Per-patient (assessment times, WindowLabels) from therapy events."""
    therapy = defaultdict(list)
    for ev in cohort.therapy:
        therapy[ev.patient_id].append(ev)
    out = {}
    for tr in cohort.traces:
        times = assessment_times(float(tr.t[-1]) if tr.t.size else 0.0, cfg.period_hours)
        out[tr.patient_id] = phenotype.label_patient(therapy[tr.patient_id], times, cfg.window_hours)
    return out


def preprocess(cohort: Cohort, seed: int, cfg: PreprocessConfig = PreprocessConfig(),
               plan: SplitPlan | None = None) -> Dataset:
    """Label, window, split (by patient), fit dev-only scales and encode everything."""
    labels = label_cohort(cohort, cfg)
    clinical_by_patient = defaultdict(list)
    for ev in cohort.clinical:
        clinical_by_patient[ev.patient_id].append(ev)
    patients = {p.patient_id: p for p in cohort.patients}

    counts = defaultdict(int)
    rows = []  # (RawWindow, WindowLabel, clinical summary)
    for tr in cohort.traces:
        wl_by_time = {wl.assessment_time: wl for wl in labels[tr.patient_id]}
        keep = [a for a, wl in wl_by_time.items() if wl.label.trainable]
        counts["excluded"] += len(wl_by_time) - len(keep)
        windows, rejected = signal.cut_windows(tr, sorted(keep), cfg.window_hours, cfg.min_coverage, cfg.max_gap)
        for r in rejected:
            counts[f"rejected_{r.reason}"] += 1
        events = sorted(clinical_by_patient[tr.patient_id], key=lambda e: e.time)
        for w in windows:
            summary = ehr.raw_clinical_summary(ehr.events_in_window(events, w.assessment_time, cfg.window_hours))
            rows.append((w, wl_by_time[w.assessment_time], summary))
    if not rows:
        raise ValueError("no usable windows in cohort")

    ever = defaultdict(bool)
    for w, wl, _ in rows:
        ever[w.patient_id] |= wl.label is AcuityLabel.UNSTABLE
    if plan is None:
        plan = make_split(sorted(ever), seed, cfg.dev_fraction, cfg.folds, cfg.stratify, dict(ever))
    dev = set(plan.dev_patients)

    sig_scale = signal.fit_scale([w for w, _, _ in rows if w.patient_id in dev], dev)
    demo_scale = ehr.fit_demographic_scale([patients[p] for p in sorted(dev)])
    clin_scale = ehr.fit_clinical_scale([s for w, _, s in rows if w.patient_id in dev])

    x = np.stack([signal.scale_array(w.data, sig_scale) for w, _, _ in rows])
    demo = np.stack([ehr.encode_demographics(patients[w.patient_id], demo_scale) for w, _, _ in rows])
    clin = np.stack([ehr.encode_clinical_summary(s, clin_scale) for _, _, s in rows])
    y = np.array([wl.label is AcuityLabel.UNSTABLE for _, wl, _ in rows], dtype=np.int64)
    meta = {
        "preprocess": asdict(cfg),
        "seed": seed,
        "counts": dict(sorted(counts.items())),
        "signal_scale": asdict(sig_scale),
        "demographic_scale": asdict(demo_scale),
        "clinical_scale": {"scale": asdict(clin_scale.scale), "fill": list(clin_scale.fill),
                           "cognitive_fill": clin_scale.cognitive_fill},
    }
    meta = json.loads(json.dumps(meta))  # same form as after save/load
    return Dataset(
        x=x, demographics=demo, clinical=clin, y=y,
        patient=np.array([w.patient_id for w, _, _ in rows]),
        time=np.array([w.assessment_time for w, _, _ in rows]),
        sofa=np.array([np.nan if wl.sofa is None else wl.sofa for _, wl, _ in rows], dtype=np.float64),
        plan=plan, meta=meta,
    )
