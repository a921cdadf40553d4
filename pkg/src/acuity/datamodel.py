"""Domain types and the on-disk cohort / report formats.

A cohort directory holds four UTF-8 CSV files with header rows::

    patients.csv  patient_id,age,sex,race,ethnicity,height_cm,weight_kg,los_days,<11 disease flags>
    accel.csv     patient_id,t_sec,x_g,y_g,z_g
    clinical.csv  patient_id,t_sec,kind,value
    therapy.csv   patient_id,t_sec,kind,value

Times are seconds since enrollment.
"""
from __future__ import annotations

import enum
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import NamedTuple

import numpy as np
import pandas as pd
import pyarrow as pa
import pyarrow.csv as pacsv

SEXES = ("female", "male")
RACES = ("white", "african_american", "other")
ETHNICITIES = ("hispanic", "non_hispanic")
DISEASES = (
    "cancer",
    "cerebrovascular",
    "dementia",
    "paraplegia_hemiplegia",
    "congestive_heart_failure",
    "copd",
    "diabetes",
    "metastatic_carcinoma",
    "liver",
    "peptic_ulcer",
    "renal",
)
NUMERIC_CLINICAL = ("blood_pressure", "heart_rate", "spo2", "pain_score", "braden_score")
CLINICAL_KINDS = NUMERIC_CLINICAL + ("cognitive_status",)
COGNITIVE_STATES = ("normal", "delirium", "coma")
THERAPY_KINDS = (
    "vasopressor",
    "mechanical_ventilation",
    "crrt",
    "transfusion_unit",
    "sofa_observation",
    "death",
    "discharge",
)
MAX_TRACE_SECONDS = 7 * 24 * 3600.0
SOFA_MAX = 24

PATIENT_COLUMNS = ("patient_id", "age", "sex", "race", "ethnicity", "height_cm", "weight_kg",
                   "los_days") + DISEASES
ACCEL_COLUMNS = ("patient_id", "t_sec", "x_g", "y_g", "z_g")
EVENT_COLUMNS = ("patient_id", "t_sec", "kind", "value")


class CohortError(ValueError):
    """Malformed or inconsistent cohort input."""


class ReportIncomplete(ValueError):
    pass


class AcuityLabel(str, enum.Enum):
    STABLE = "stable"
    UNSTABLE = "unstable"
    EXCLUDED_DEAD = "excluded_dead"
    EXCLUDED_DISCHARGED = "excluded_discharged"

    @property
    def trainable(self) -> bool:
        return self in (AcuityLabel.STABLE, AcuityLabel.UNSTABLE)


@dataclass(frozen=True)
class PatientRecord:
    patient_id: str
    age: float
    sex: str
    race: str
    ethnicity: str
    height: float
    weight: float
    length_of_stay: float
    comorbidities: frozenset = frozenset()

    def __post_init__(self):
        problems = []
        if not self.patient_id:
            problems.append("empty patient_id")
        if not self.age > 0:
            problems.append(f"age={self.age} must be > 0")
        if not self.height > 0:
            problems.append(f"height={self.height} must be > 0")
        if not self.weight > 0:
            problems.append(f"weight={self.weight} must be > 0")
        if not self.length_of_stay >= 0:
            problems.append(f"length_of_stay={self.length_of_stay} must be >= 0")
        if self.sex not in SEXES:
            problems.append(f"sex={self.sex!r} not in {SEXES}")
        if self.race not in RACES:
            problems.append(f"race={self.race!r} not in {RACES}")
        if self.ethnicity not in ETHNICITIES:
            problems.append(f"ethnicity={self.ethnicity!r} not in {ETHNICITIES}")
        unknown = set(self.comorbidities) - set(DISEASES)
        if unknown:
            problems.append(f"unknown comorbidities {sorted(unknown)}")
        if problems:
            raise ValueError("; ".join(problems))
        object.__setattr__(self, "comorbidities", frozenset(self.comorbidities))


@dataclass(frozen=True, eq=False)
class AccelTrace:
    patient_id: str
    t: np.ndarray  # seconds, strictly increasing
    xyz: np.ndarray  # N x 3, g
    device_rate_hint: float = float("nan")

    def __post_init__(self):
        t = np.asarray(self.t, dtype=np.float64)
        xyz = np.asarray(self.xyz, dtype=np.float64).reshape(-1, 3)
        if t.ndim != 1 or t.size != xyz.shape[0]:
            raise ValueError(f"{self.patient_id}: {t.size} timestamps vs {xyz.shape[0]} samples")
        if t.size > 1:
            bad = np.flatnonzero(np.diff(t) <= 0)
            if bad.size:
                raise ValueError(f"{self.patient_id}: timestamps not strictly increasing at sample {bad[0] + 1}")
            if t[-1] - t[0] > MAX_TRACE_SECONDS:
                raise ValueError(f"{self.patient_id}: trace spans {t[-1] - t[0]:.0f} s > 7 days")
        t.setflags(write=False)
        xyz.setflags(write=False)
        object.__setattr__(self, "t", t)
        object.__setattr__(self, "xyz", xyz)
        if math.isnan(self.device_rate_hint) and t.size > 1:
            object.__setattr__(self, "device_rate_hint", float(1.0 / np.median(np.diff(t))))

    def __eq__(self, other):
        if not isinstance(other, AccelTrace):
            return NotImplemented
        return (self.patient_id == other.patient_id and np.array_equal(self.t, other.t)
                and np.array_equal(self.xyz, other.xyz))

    __hash__ = None


@dataclass(frozen=True)
class ClinicalEvent:
    patient_id: str
    time: float
    kind: str
    numeric_value: float | None = None
    categorical_value: str | None = None

    def __post_init__(self):
        if self.kind not in CLINICAL_KINDS:
            raise ValueError(f"unknown clinical kind {self.kind!r}")
        if (self.numeric_value is None) == (self.categorical_value is None):
            raise ValueError("exactly one of numeric_value / categorical_value must be set")
        if self.kind == "cognitive_status":
            if self.categorical_value not in COGNITIVE_STATES:
                raise ValueError(f"cognitive_status value {self.categorical_value!r} not in {COGNITIVE_STATES}")
        elif self.numeric_value is None or not math.isfinite(self.numeric_value):
            raise ValueError(f"{self.kind} needs a finite numeric value")


@dataclass(frozen=True)
class TherapyEvent:
    patient_id: str
    time: float
    kind: str
    sofa_value: int | None = None

    def __post_init__(self):
        if self.kind not in THERAPY_KINDS:
            raise ValueError(f"unknown therapy kind {self.kind!r}")
        if self.kind == "sofa_observation":
            if self.sofa_value is None or not 0 <= self.sofa_value <= SOFA_MAX:
                raise ValueError(f"sofa_value={self.sofa_value} outside [0, {SOFA_MAX}]")
        elif self.sofa_value is not None:
            raise ValueError(f"{self.kind} carries no value")


class Cohort(NamedTuple):
    patients: list[PatientRecord]
    traces: list[AccelTrace]
    clinical: list[ClinicalEvent]
    therapy: list[TherapyEvent]


# --- reports ----------------------------------------------------------------------

@dataclass
class MetricSummary:
    median: float | None
    lower: float | None
    upper: float | None
    n: int = 0


@dataclass
class EvalReport:
    scenario: str
    seed: int
    metrics: dict[str, MetricSummary]
    bootstrap: list[dict[str, float | None]]
    point: dict[str, float | None] = field(default_factory=dict)
    n_bootstrap: int = 100
    n_skipped: int = 0
    threshold: float = 0.5
    hyperparameters: dict = field(default_factory=dict)
    fold_aucs: list[float] = field(default_factory=list)
    extra: dict = field(default_factory=dict)


def _clean(value):
    if isinstance(value, float) and not math.isfinite(value):
        return None
    if isinstance(value, np.generic):
        return _clean(value.item())
    if isinstance(value, dict):
        return {str(k): _clean(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_clean(v) for v in value]
    return value


def report_to_json(report: EvalReport) -> str:
    return json.dumps(_clean(asdict(report)), sort_keys=True, indent=2, allow_nan=False) + "\n"


def save_report(report: EvalReport, path) -> Path:
    """Write ``report`` as JSON; identical content gives identical bytes."""
    if not report.bootstrap:
        raise ReportIncomplete("report has an empty bootstrap list")
    if not report.metrics:
        raise ReportIncomplete("report has no metric summaries")
    path = Path(path)
    path.write_text(report_to_json(report), encoding="utf-8")
    return path


def load_report(path) -> EvalReport:
    raw = json.loads(Path(path).read_text(encoding="utf-8"))
    raw["metrics"] = {k: MetricSummary(**v) for k, v in raw["metrics"].items()}
    return EvalReport(**raw)


# --- cohort CSV I/O -------------------------------------------------------------------

def _read_csv(path: Path, columns: tuple[str, ...]) -> pd.DataFrame:
    if not path.is_file():
        raise CohortError(f"missing file: {path}")
    df = pd.read_csv(path, dtype=str, keep_default_na=False, encoding="utf-8")
    if tuple(df.columns) != columns:
        raise CohortError(f"{path.name}: header {list(df.columns)} != expected {list(columns)}")
    return df


def _to_float(text: str) -> float:
    try:
        return float(text)
    except ValueError:
        return math.nan


def _numeric(df: pd.DataFrame, column: str, fname: str) -> np.ndarray:
    # python float() parsing is correctly rounded, so written reprs load back exactly
    values = np.array([_to_float(v) for v in df[column]], dtype=np.float64)
    bad = np.flatnonzero(~np.isfinite(values))
    if bad.size:
        i = bad[0]
        raise CohortError(f"{fname}, line {i + 2}, field {column}: not a finite number: {df[column].iat[i]!r}")
    return values


def _row_error(fname: str, index: int, exc: Exception) -> CohortError:
    return CohortError(f"{fname}, line {index + 2}: {exc}")


def _load_patients(path: Path) -> list[PatientRecord]:
    df = _read_csv(path, PATIENT_COLUMNS)
    nums = {c: _numeric(df, c, path.name) for c in ("age", "height_cm", "weight_kg", "los_days")}
    flags = {}
    for d in DISEASES:
        bad = np.flatnonzero(~df[d].isin(["0", "1"]).to_numpy())
        if bad.size:
            raise CohortError(f"{path.name}, line {bad[0] + 2}, field {d}: flag must be 0 or 1")
        flags[d] = df[d].to_numpy() == "1"
    patients, seen = [], set()
    for i in range(len(df)):
        pid = df["patient_id"].iat[i]
        if pid in seen:
            raise CohortError(f"{path.name}, line {i + 2}, field patient_id: duplicate {pid!r}")
        seen.add(pid)
        try:
            patients.append(PatientRecord(
                patient_id=pid, age=nums["age"][i], sex=df["sex"].iat[i], race=df["race"].iat[i],
                ethnicity=df["ethnicity"].iat[i], height=nums["height_cm"][i],
                weight=nums["weight_kg"][i], length_of_stay=nums["los_days"][i],
                comorbidities=frozenset(d for d in DISEASES if flags[d][i])))
        except ValueError as exc:
            raise _row_error(path.name, i, exc) from None
    return patients


def _load_accel(path: Path, known: set[str]) -> list[AccelTrace]:
    if not path.is_file():
        raise CohortError(f"missing file: {path}")
    types = {"patient_id": pa.dictionary(pa.int32(), pa.string()), "t_sec": pa.float64(), "x_g": pa.float64(),
             "y_g": pa.float64(), "z_g": pa.float64()}
    try:
        table = pacsv.read_csv(path, convert_options=pacsv.ConvertOptions(
            column_types=types, include_columns=list(ACCEL_COLUMNS), include_missing_columns=False))
    except (pa.ArrowInvalid, pa.ArrowKeyError, KeyError) as exc:
        # slow path only to locate the offending row
        df = _read_csv(path, ACCEL_COLUMNS)
        for c in ACCEL_COLUMNS[1:]:
            _numeric(df, c, path.name)
        raise CohortError(f"{path.name}: {exc}") from None
    header = path.open(encoding="utf-8").readline().strip().split(",")
    if tuple(header) != ACCEL_COLUMNS:
        raise CohortError(f"{path.name}: header {header} != expected {list(ACCEL_COLUMNS)}")
    if table.num_rows and any(table.column(c).null_count for c in ACCEL_COLUMNS):
        raise CohortError(f"{path.name}: empty field")
    chunks = table.column("patient_id").unify_dictionaries().chunks if table.num_rows else []
    if chunks:
        codes = np.concatenate([c.indices.to_numpy(zero_copy_only=False) for c in chunks])
        ids = np.asarray(chunks[0].dictionary.to_pylist(), dtype=object)[codes]
    else:
        codes, ids = np.zeros(0, dtype=int), np.zeros(0, dtype=object)
    t = table.column("t_sec").to_numpy()
    xyz = np.column_stack([table.column(c).to_numpy() for c in ("x_g", "y_g", "z_g")]) if table.num_rows \
        else np.zeros((0, 3))
    for j, c in enumerate(ACCEL_COLUMNS[1:]):
        col = t if j == 0 else xyz[:, j - 1]
        bad = np.flatnonzero(~np.isfinite(col))
        if bad.size:
            raise CohortError(f"{path.name}, line {bad[0] + 2}, field {c}: not a finite number")
    # rows of one patient must be contiguous and strictly increasing in time
    boundaries = np.flatnonzero(codes[1:] != codes[:-1]) + 1
    starts = np.concatenate([[0], boundaries]).astype(int) if len(ids) else np.array([], dtype=int)
    ends = np.concatenate([boundaries, [len(ids)]]).astype(int) if len(ids) else np.array([], dtype=int)
    traces, seen = [], set()
    for s, e in zip(starts, ends):
        pid = ids[s]
        if pid not in known:
            raise CohortError(f"{path.name}, line {s + 2}: unknown patient_id {pid!r}")
        if pid in seen:
            raise CohortError(f"{path.name}, line {s + 2}: rows for {pid!r} are not contiguous")
        seen.add(pid)
        bad = np.flatnonzero(np.diff(t[s:e]) <= 0)
        if bad.size:
            raise CohortError(f"{path.name}, line {s + bad[0] + 3}: timestamps for {pid!r} not strictly increasing")
        try:
            traces.append(AccelTrace(pid, t[s:e].copy(), xyz[s:e].copy()))
        except ValueError as exc:
            raise CohortError(f"{path.name}, line {s + 2}: {exc}") from None
    return traces


def _load_events(path: Path, known: set[str], clinical: bool) -> list:
    df = _read_csv(path, EVENT_COLUMNS)
    times = _numeric(df, "t_sec", path.name)
    out = []
    for i in range(len(df)):
        pid, kind, value = df["patient_id"].iat[i], df["kind"].iat[i], df["value"].iat[i]
        if pid not in known:
            raise CohortError(f"{path.name}, line {i + 2}, field patient_id: unknown patient_id {pid!r}")
        try:
            if clinical:
                if kind == "cognitive_status":
                    ev = ClinicalEvent(pid, times[i], kind, categorical_value=value)
                else:
                    ev = ClinicalEvent(pid, times[i], kind, numeric_value=float(value) if value else None)
            else:
                sofa = None
                if value != "":
                    as_float = float(value)
                    if as_float != int(as_float):
                        raise ValueError(f"sofa value {value!r} is not an integer")
                    sofa = int(as_float)
                ev = TherapyEvent(pid, times[i], kind, sofa_value=sofa)
        except ValueError as exc:
            raise CohortError(f"{path.name}, line {i + 2}, field kind/value: {exc}") from None
        out.append(ev)
    return out


def load_cohort(path) -> Cohort:
    """Read and validate a cohort directory; all patient references must resolve."""
    path = Path(path)
    if not path.is_dir():
        raise CohortError(f"cohort directory not found: {path}")
    patients = _load_patients(path / "patients.csv")
    known = {p.patient_id for p in patients}
    traces = _load_accel(path / "accel.csv", known)
    clinical = _load_events(path / "clinical.csv", known, clinical=True)
    therapy = _load_events(path / "therapy.csv", known, clinical=False)
    return Cohort(patients, traces, clinical, therapy)


def _fmt(x: float) -> str:
    return repr(float(x))


def _write_accel(traces: list[AccelTrace], path: Path) -> None:
    # arrow formats floats in shortest round-trip form, in C++
    n = [tr.t.size for tr in traces]
    table = pa.table({
        "patient_id": pa.array(np.repeat(np.array([tr.patient_id for tr in traces], dtype=object), n)
                               if traces else [], type=pa.string()),
        "t_sec": np.concatenate([tr.t for tr in traces]) if traces else np.zeros(0),
        "x_g": np.concatenate([tr.xyz[:, 0] for tr in traces]) if traces else np.zeros(0),
        "y_g": np.concatenate([tr.xyz[:, 1] for tr in traces]) if traces else np.zeros(0),
        "z_g": np.concatenate([tr.xyz[:, 2] for tr in traces]) if traces else np.zeros(0),
    })
    with path.open("wb") as fh:
        fh.write((",".join(ACCEL_COLUMNS) + "\n").encode("utf-8"))
        pacsv.write_csv(table, fh, pacsv.WriteOptions(include_header=False, quoting_style="none"))


def write_cohort(cohort: Cohort, path) -> Path:
    """Write ``cohort`` in the four-file CSV layout (floats in shortest round-trip form)."""
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    rows = []
    for p in cohort.patients:
        rows.append([p.patient_id, _fmt(p.age), p.sex, p.race, p.ethnicity, _fmt(p.height),
                     _fmt(p.weight), _fmt(p.length_of_stay)]
                    + ["1" if d in p.comorbidities else "0" for d in DISEASES])
    pd.DataFrame(rows, columns=PATIENT_COLUMNS).to_csv(path / "patients.csv", index=False, lineterminator="\n")

    _write_accel(cohort.traces, path / "accel.csv")

    clinical = [[e.patient_id, _fmt(e.time), e.kind,
                 e.categorical_value if e.categorical_value is not None else _fmt(e.numeric_value)]
                for e in cohort.clinical]
    pd.DataFrame(clinical, columns=EVENT_COLUMNS).to_csv(path / "clinical.csv", index=False, lineterminator="\n")
    therapy = [[e.patient_id, _fmt(e.time), e.kind, "" if e.sofa_value is None else str(e.sofa_value)]
               for e in cohort.therapy]
    pd.DataFrame(therapy, columns=EVENT_COLUMNS).to_csv(path / "therapy.csv", index=False, lineterminator="\n")
    return path
