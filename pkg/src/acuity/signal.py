"""Accelerometer preprocessing: 10 Hz resampling, [0, 1] scaling, windows, decimation."""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .datamodel import AccelTrace

GRID_HZ = 10.0
MAX_GAP_SECONDS = 5.0
MIN_COVERAGE = 0.5
CHANNELS = ("x", "y", "z")


class InsufficientCoverage(ValueError):
    pass


class DegenerateChannel(ValueError):
    pass


class LeakageError(RuntimeError):
    """Holdout data reached a step that may only see the development split."""


@dataclass(frozen=True, eq=False)
class RawWindow:
    """Resampled but unscaled window (g units)."""
    patient_id: str
    assessment_time: float
    data: np.ndarray  # 3 x N
    coverage: float = 1.0


@dataclass(frozen=True, eq=False)
class SampleWindow:
    patient_id: str
    assessment_time: float
    data: np.ndarray  # 3 x L, values in [0, 1]
    downsample_factor: int = 1
    source_rate: float = GRID_HZ

    def __post_init__(self):
        if self.data.ndim != 2 or self.data.shape[0] != 3:
            raise ValueError(f"window data must be 3 x L, got {self.data.shape}")
        if self.data.size and (self.data.min() < 0.0 or self.data.max() > 1.0):
            raise ValueError("window values outside [0, 1]")


@dataclass(frozen=True)
class ScaleParams:
    minimum: tuple[float, float, float]
    maximum: tuple[float, float, float]

    def __post_init__(self):
        for ch, lo, hi in zip(CHANNELS, self.minimum, self.maximum):
            if not hi > lo:
                raise DegenerateChannel(f"channel {ch}: max {hi} <= min {lo}")


@dataclass(frozen=True)
class Rejection:
    assessment_time: float
    reason: str


def window_length(window_hours: float, factor: int = 1) -> int:
    n = window_hours * 3600.0 * GRID_HZ / factor
    if abs(n - round(n)) > 1e-9:
        raise ValueError(f"{window_hours} h at {GRID_HZ} Hz / {factor} is not a whole number of samples")
    return int(round(n))


def resample_to_10hz(trace: AccelTrace, t_start: float, t_end: float, max_gap: float = MAX_GAP_SECONDS,
                     min_coverage: float = MIN_COVERAGE, return_coverage: bool = False):
    """Linear interpolation of ``trace`` onto t_start + i/10 for t in [t_start, t_end).

    Grid points inside a raw gap longer than ``max_gap`` (or outside the
    recording) hold the last observed value and count as uncovered; before
    the first sample the first value is used.  Raises InsufficientCoverage
    when fewer than ``min_coverage`` of grid points are covered.
    """
    n = int(round((t_end - t_start) * GRID_HZ))
    if n < 1:
        raise ValueError(f"empty interval [{t_start}, {t_end})")
    grid = t_start + np.arange(n) / GRID_HZ
    t_all = trace.t
    if t_all.size == 0:
        raise InsufficientCoverage(f"{trace.patient_id}: empty trace")
    lo = max(int(np.searchsorted(t_all, t_start, side="right")) - 1, 0)
    hi = min(int(np.searchsorted(t_all, grid[-1], side="left")) + 1, t_all.size)
    ts, vs = t_all[lo:hi], trace.xyz[lo:hi]

    j = np.searchsorted(ts, grid, side="right") - 1
    before = j < 0
    j = np.clip(j, 0, ts.size - 1)
    nxt = np.minimum(j + 1, ts.size - 1)
    span = ts[nxt] - ts[j]
    exact = ts[j] == grid
    bridged = (nxt > j) & (span <= max_gap) & ~before
    covered = exact | bridged
    frac = np.zeros(n)
    frac[bridged] = (grid[bridged] - ts[j[bridged]]) / span[bridged]
    out = vs[j] + frac[:, None] * (vs[nxt] - vs[j])
    coverage = float(covered.mean())
    if coverage < min_coverage:
        raise InsufficientCoverage(
            f"{trace.patient_id}: coverage {coverage:.3f} < {min_coverage} in [{t_start}, {t_end})")
    out = out.T.copy()
    return (out, coverage) if return_coverage else out


def cut_windows(trace: AccelTrace, assessments, window_hours: float = 4.0,
                min_coverage: float = MIN_COVERAGE, max_gap: float = MAX_GAP_SECONDS):
    """One window [a - window, a) per assessment time ``a``.

    Returns (accepted RawWindows, Rejections); rejections are data, not errors.
    """
    assessments = list(assessments)
    if any(b < a for a, b in zip(assessments, assessments[1:])):
        raise ValueError("assessments must be sorted")
    width = window_hours * 3600.0
    expected = window_length(window_hours)
    windows, rejected = [], []
    for a in assessments:
        start = a - width
        if start < 0:
            rejected.append(Rejection(a, "insufficient_history"))
            continue
        try:
            data, cov = resample_to_10hz(trace, start, a, max_gap, min_coverage, return_coverage=True)
        except InsufficientCoverage:
            rejected.append(Rejection(a, "low_coverage"))
            continue
        if data.shape[1] != expected:
            raise AssertionError(f"window length {data.shape[1]} != {expected}")
        windows.append(RawWindow(trace.patient_id, a, data, cov))
    return windows, rejected


def fit_scale(windows: list[RawWindow], dev_patients) -> ScaleParams:
    """Global per-channel min/max over development windows only."""
    if not windows:
        raise ValueError("fit_scale needs at least one development window")
    dev_patients = set(dev_patients)
    leaked = sorted({w.patient_id for w in windows} - dev_patients)
    if leaked:
        raise LeakageError(f"fit_scale received windows from non-development patients {leaked[:5]}")
    lo = np.min([w.data.min(axis=1) for w in windows], axis=0)
    hi = np.max([w.data.max(axis=1) for w in windows], axis=0)
    return ScaleParams(tuple(float(v) for v in lo), tuple(float(v) for v in hi))


def scale_array(data: np.ndarray, params: ScaleParams) -> np.ndarray:
    lo = np.asarray(params.minimum)[:, None]
    hi = np.asarray(params.maximum)[:, None]
    return np.clip((data - lo) / (hi - lo), 0.0, 1.0)


def apply_scale(window: RawWindow, params: ScaleParams) -> SampleWindow:
    """v' = clamp((v - min) / (max - min), 0, 1) per channel."""
    return SampleWindow(window.patient_id, window.assessment_time, scale_array(window.data, params))


def decimate_array(data: np.ndarray, factor: int) -> np.ndarray:
    """Non-overlapping block means along the last axis."""
    if factor < 1:
        raise ValueError(f"factor must be >= 1, got {factor}")
    length = data.shape[-1]
    if length % factor:
        raise ValueError(f"length {length} not divisible by factor {factor}")
    if factor == 1:
        return data
    return data.reshape(*data.shape[:-1], length // factor, factor).mean(axis=-1)


def decimate(window: SampleWindow, factor: int) -> SampleWindow:
    if factor not in (1, 2, 4):
        raise ValueError(f"downsample factor must be 1, 2 or 4, got {factor}")
    return SampleWindow(window.patient_id, window.assessment_time, decimate_array(window.data, factor),
                        downsample_factor=window.downsample_factor * factor)


def dump_window_csv(window, path) -> Path:
    """Debug dump: t,x,y,z rows, t relative to the window start."""
    path = Path(path)
    data = window.data
    step = getattr(window, "downsample_factor", 1) / GRID_HZ
    t = np.arange(data.shape[1]) * step
    np.savetxt(path, np.column_stack([t, data.T]), delimiter=",", header="t,x,y,z", comments="", fmt="%.6f")
    return path
