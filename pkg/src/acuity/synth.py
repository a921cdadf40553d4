"""Synthetic ICU cohorts with a controllable stable/unstable signal.

Each patient gets a latent unstable episode that drives therapy events; the
phenotype rules then label every assessment window, and those labels drive
movement attenuation (burst rate scaled by exp(-effect_size)), clinical
shifts and SOFA.  With ``effect_size=0`` movement, demographics and clinical
readings are drawn from the same distributions regardless of label.
"""
from __future__ import annotations

import dataclasses
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .datamodel import (DISEASES, AccelTrace, ClinicalEvent, Cohort, PatientRecord, TherapyEvent,
                        write_cohort)
from .phenotype import label_window

HOUR = 3600.0

# cohort marginals: (development cohort, test cohort)
_MARGINALS = {
    "female": (20 / 60, 0.1666),
    "hispanic": (0.0866, 0.1153),
    "age": ((57.78, 16.94), (53.88, 17.49)),
    "height": ((173.78, 9.26), (172.80, 8.32)),
    "weight": ((89.19, 25.00), (78.10, 16.33)),
    "los": ((19.76, 23.56), (30.23, 48.53)),
    "race": ((0.8166, 0.1333, 0.0501), (0.6538, 0.1538, 0.1924)),
    "disease": (
        (0.0166, 0.1333, 0.0333, 0.15, 0.1166, 0.0866, 0.1166, 0.0, 0.2333, 0.0333, 0.1333),
        (0.1538, 0.1538, 0.0769, 0.0384, 0.0769, 0.0769, 0.1923, 0.0, 0.2307, 0.0384, 0.2692),
    ),
}
BURSTS_PER_HOUR = 120.0
GRAVITY_NOISE_G = 0.01
POSTURE_TILT = 0.15


class SynthError(ValueError):
    pass


@dataclass(frozen=True)
class SynthConfig:
    n_patients: int = 86
    dev_fraction: float = 60 / 86
    seed: int = 0
    window_hours: float = 4.0
    assessment_period_hours: float = 4.0
    effect_size: float = 1.0
    unstable_patient_fraction: float = 28 / 110
    max_days: float = 7.0
    nominal_rates: tuple[float, ...] = (32.0, 100.0)
    # caps each recording (desk-scale runs); None records the whole stay up to max_days
    record_hours: float | None = None

    def __post_init__(self):
        if not 0 < self.dev_fraction < 1:
            raise SynthError(f"dev_fraction must be in (0, 1), got {self.dev_fraction}")
        if self.effect_size < 0:
            raise SynthError(f"effect_size must be >= 0, got {self.effect_size}")
        if self.n_patients < 4:
            raise SynthError(f"n_patients={self.n_patients} too small to populate both classes (need >= 4)")
        if not 0 < self.unstable_patient_fraction < 1:
            raise SynthError("unstable_patient_fraction must be in (0, 1)")
        if self.window_hours <= 0 or self.assessment_period_hours <= 0:
            raise SynthError("window and assessment period must be positive")
        if not self.nominal_rates or min(self.nominal_rates) <= 0:
            raise SynthError("nominal_rates must be positive")
        if self.record_hours is not None and self.record_hours <= 0:
            raise SynthError("record_hours must be positive")
        object.__setattr__(self, "nominal_rates", tuple(float(r) for r in self.nominal_rates))


def _parse_value(field: dataclasses.Field, text: str):
    text = text.strip()
    if field.name == "nominal_rates":
        return tuple(float(v) for v in text.replace(" ", "").split(",") if v)
    if field.name == "record_hours":
        return None if text.lower() in ("", "none") else float(text)
    if field.type in ("int", int):
        return int(text)
    return float(text)


def config_from_mapping(values: dict[str, str], base: SynthConfig | None = None) -> SynthConfig:
    fields = {f.name: f for f in dataclasses.fields(SynthConfig)}
    unknown = set(values) - set(fields)
    if unknown:
        raise SynthError(f"unknown synth config keys {sorted(unknown)}")
    parsed = {k: _parse_value(fields[k], v) for k, v in values.items()}
    return dataclasses.replace(base or SynthConfig(), **parsed)


def read_kv_file(path) -> dict[str, str]:
    out = {}
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise SynthError(f"{path}:{lineno}: expected key=value")
        key, value = line.split("=", 1)
        out[key.strip()] = value.strip()
    return out


def config_to_text(config: SynthConfig) -> str:
    lines = []
    for f in dataclasses.fields(config):
        v = getattr(config, f.name)
        if f.name == "nominal_rates":
            v = ",".join(repr(r) for r in v)
        lines.append(f"{f.name}={v}")
    return "\n".join(lines) + "\n"


def inject_transfusion_run(patient_id: str, start_time: float, units: int,
                           span_hours: float) -> list[TherapyEvent]:
    """``units`` transfusion events evenly spaced over [start, start + span)."""
    if units < 0:
        raise SynthError(f"units must be >= 0, got {units}")
    if span_hours < 0:
        raise SynthError(f"negative span {span_hours}")
    step = span_hours * HOUR / units if units else 0.0
    return [TherapyEvent(patient_id, start_time + i * step, "transfusion_unit") for i in range(units)]


def _lognormal(rng, mean: float, sd: float) -> float:
    sigma2 = math.log1p((sd / mean) ** 2)
    return float(rng.lognormal(math.log(mean) - sigma2 / 2, math.sqrt(sigma2)))


def _draw_patient(rng, pid: str, cohort: int, shift: float) -> PatientRecord:
    m = _MARGINALS
    age = float(np.clip(rng.normal(m["age"][cohort][0] + 6.0 * shift, m["age"][cohort][1]), 18, 95))
    height = float(np.clip(rng.normal(*m["height"][cohort]), 145, 205))
    weight = float(np.clip(rng.normal(m["weight"][cohort][0] + 10.0 * shift, m["weight"][cohort][1]), 40, 200))
    los = _lognormal(rng, *m["los"][cohort]) * math.exp(0.3 * shift)
    sex = "female" if rng.random() < m["female"][cohort] else "male"
    race = ("white", "african_american", "other")[rng.choice(3, p=np.array(m["race"][cohort]) / sum(m["race"][cohort]))]
    ethnicity = "hispanic" if rng.random() < m["hispanic"][cohort] else "non_hispanic"
    flags = rng.random(len(DISEASES)) < np.array(m["disease"][cohort])
    return PatientRecord(pid, round(age, 1), sex, race, ethnicity, round(height, 1), round(weight, 1),
                         round(max(los, 1.0), 2), frozenset(d for d, f in zip(DISEASES, flags) if f))


def _movement(rng, t: np.ndarray, block_edges: np.ndarray, unstable: np.ndarray, effect: float) -> np.ndarray:
    """Gravity + tremor + Poisson movement bursts; burst rate scaled by exp(-effect) in unstable blocks.

    A burst lifts and turns the wrist (a smooth excursion of the gravity vector
    away from the resting posture) with a superimposed oscillation.
    """
    rest = np.empty((t.size, 3))
    excursion = np.zeros((t.size, 3))
    oscillation = np.zeros((t.size, 3))
    activity = math.exp(rng.normal(0.0, 0.15))
    for k in range(len(block_edges) - 1):
        lo, hi = block_edges[k], block_edges[k + 1]
        # resting near palm-down; tilt is redrawn each block, as with routine repositioning
        b0, b1 = np.searchsorted(t, [lo, hi])
        rest[b0:b1] = np.array([0.0, 0.0, 1.0]) + POSTURE_TILT * rng.normal(size=3)
        rate = BURSTS_PER_HOUR * activity * (math.exp(-effect) if unstable[k] else 1.0)
        n = rng.poisson(rate * (hi - lo) / HOUR)
        for start in np.sort(rng.uniform(lo, hi, n)):
            dur = rng.uniform(5.0, 30.0)
            i0, i1 = np.searchsorted(t, [start, start + dur])
            if i1 <= i0:
                continue
            envelope = np.sin(np.pi * (t[i0:i1] - start) / dur) ** 2
            turn = rng.normal(size=3)
            turn *= rng.uniform(0.5, 1.5) / np.linalg.norm(turn)
            excursion[i0:i1] += envelope[:, None] * turn[None, :]
            shake = rng.normal(size=3)
            shake *= rng.uniform(0.05, 0.3) / np.linalg.norm(shake)
            wave = np.sin(2 * np.pi * rng.uniform(0.5, 3.0) * (t[i0:i1] - start))
            oscillation[i0:i1] += (envelope * wave)[:, None] * shake[None, :]
    gravity = rest + excursion
    gravity /= np.maximum(np.linalg.norm(gravity, axis=1, keepdims=True), 0.1)
    return gravity + oscillation + rng.normal(0.0, GRAVITY_NOISE_G, (t.size, 3))


def _clinical(rng, pid: str, lo: float, hi: float, u: float) -> list[ClinicalEvent]:
    out = []
    specs = {
        "heart_rate": lambda: rng.normal(85 + 12 * u, 12),
        "blood_pressure": lambda: rng.normal(82 - 8 * u, 10),
        "spo2": lambda: min(100.0, max(70.0, rng.normal(96 - 1.5 * u, 2))),
        "pain_score": lambda: float(np.clip(round(rng.normal(3 + u, 2)), 0, 10)),
        "braden_score": lambda: float(np.clip(round(rng.normal(16 - 2 * u, 2.5)), 6, 23)),
    }
    for kind, draw in specs.items():
        for time in np.sort(rng.uniform(lo, hi, rng.poisson(3))):
            out.append(ClinicalEvent(pid, round(float(time), 3), kind, numeric_value=round(float(draw()), 2)))
    p = np.array([0.75, 0.2, 0.05]) * np.exp(u * np.array([0.0, 1.0, 2.0]))
    for time in np.sort(rng.uniform(lo, hi, rng.integers(1, 3))):
        state = ("normal", "delirium", "coma")[rng.choice(3, p=p / p.sum())]
        out.append(ClinicalEvent(pid, round(float(time), 3), "cognitive_status", categorical_value=state))
    return out


def _generate_patient(config: SynthConfig, index: int, ever_unstable: bool):
    rng = np.random.default_rng([config.seed, index])
    pid = f"P{index:04d}"
    cohort = 0 if index < round(config.n_patients * config.dev_fraction) else 1
    e = config.effect_size
    patient = _draw_patient(rng, pid, cohort, e if ever_unstable else 0.0)

    stay_hours = min(patient.length_of_stay * 24.0, config.max_days * 24.0)
    record_hours = stay_hours if config.record_hours is None else min(stay_hours, config.record_hours)
    period, window = config.assessment_period_hours * HOUR, config.window_hours * HOUR
    n_blocks = int(math.floor(record_hours * HOUR / period + 1e-9))
    end = record_hours * HOUR

    therapy: list[TherapyEvent] = []
    if ever_unstable and n_blocks:
        length = max(1, int(round(n_blocks * rng.uniform(0.3, 0.8))))
        first = int(rng.integers(0, n_blocks - length + 1))
        for k in range(first, first + length):
            a = (k + 1) * period
            lo = max(k * period, a - window)
            kinds = rng.choice(["vasopressor", "mechanical_ventilation", "crrt"], size=rng.integers(1, 4))
            therapy += [TherapyEvent(pid, round(float(t), 3), str(kind))
                        for kind, t in zip(kinds, rng.uniform(lo, a, len(kinds)))]
        if rng.random() < 0.2:
            # massive transfusion run inside the first unstable window
            a = (first + 1) * period
            therapy += inject_transfusion_run(pid, max(first * period, a - window), 10,
                                              min(period, window) / HOUR * 0.9)
    elif n_blocks and rng.random() < 0.3:
        # sub-threshold transfusions never trigger the rule
        therapy += inject_transfusion_run(pid, rng.uniform(0, max(end - HOUR, 1.0)), int(rng.integers(1, 10)), 0.5)

    base_sofa = rng.normal(5.0 + (1.0 if ever_unstable else 0.0), 2.0)
    sorted_therapy = sorted(therapy, key=lambda ev: ev.time)
    unstable = np.array([label_window(sorted_therapy, (k + 1) * period, config.window_hours).label.value
                         == "unstable" for k in range(n_blocks)], dtype=bool)
    for k in range(n_blocks):
        sofa = int(np.clip(round(base_sofa + 4.0 * unstable[k] + rng.normal(0, 2.5)), 0, 24))
        therapy.append(TherapyEvent(pid, round(float(rng.uniform(k * period, (k + 1) * period)), 3),
                                    "sofa_observation", sofa))
    if stay_hours <= record_hours:
        therapy.append(TherapyEvent(pid, round(end, 3), "death" if rng.random() < 0.05 else "discharge"))
    therapy.sort(key=lambda ev: (ev.time, ev.kind))

    clinical: list[ClinicalEvent] = []
    for k in range(n_blocks):
        clinical += _clinical(rng, pid, k * period, (k + 1) * period, e * unstable[k])
    clinical.sort(key=lambda ev: (ev.time, ev.kind))

    rate = float(rng.choice(config.nominal_rates))
    n_est = int(end * rate * 1.1) + 16
    dt = rng.uniform(0.95, 1.05, n_est) / rate
    t = np.concatenate([[0.0], np.cumsum(dt)])
    t = t[t < end]
    if rng.random() < 0.15 and end > 600:
        # device off-wrist for a while
        g0 = rng.uniform(0, end - 300)
        t = t[(t < g0) | (t > g0 + rng.uniform(30, 240))]
    edges = np.arange(n_blocks + 1) * period
    if edges.size < 2 or edges[-1] < end:
        edges = np.append(edges, end) if edges.size else np.array([0.0, end])
        unstable = np.append(unstable, False)
    xyz = _movement(rng, t, edges, unstable, e)
    trace = AccelTrace(pid, np.round(t, 4), np.round(xyz, 5), device_rate_hint=rate)
    return patient, trace, clinical, therapy


def generate_cohort(config: SynthConfig, workers: int = 1) -> Cohort:
    """Build a cohort in memory; a pure function of ``config``."""
    n_unstable = min(config.n_patients - 1, max(1, round(config.unstable_patient_fraction * config.n_patients)))
    order = np.random.default_rng([config.seed, 2**31]).permutation(config.n_patients)
    ever = np.zeros(config.n_patients, dtype=bool)
    ever[order[:n_unstable]] = True
    jobs = [(config, i, bool(ever[i])) for i in range(config.n_patients)]
    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            parts = list(pool.map(lambda job: _generate_patient(*job), jobs))
    else:
        parts = [_generate_patient(*job) for job in jobs]
    return Cohort([p[0] for p in parts], [p[1] for p in parts],
                  [e for p in parts for e in p[2]], [e for p in parts for e in p[3]])


def generate(config: SynthConfig, out_dir, workers: int = 1) -> Path:
    """Write a synthetic cohort directory in the standard CSV layout."""
    out = write_cohort(generate_cohort(config, workers), out_dir)
    (out / "synth.cfg").write_text(config_to_text(config), encoding="utf-8")
    return out
