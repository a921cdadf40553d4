import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from acuity.datamodel import AccelTrace
from acuity.signal import (DegenerateChannel, InsufficientCoverage, LeakageError, RawWindow, SampleWindow,
                           ScaleParams, apply_scale, cut_windows, decimate, decimate_array, dump_window_csv,
                           fit_scale, resample_to_10hz, scale_array, window_length)


def trace_from(t, xyz, pid="p"):
    return AccelTrace(pid, np.asarray(t, dtype=float), np.asarray(xyz, dtype=float))


def test_constant_input_constant_output():
    t = np.arange(0, 60, 1 / 32)
    out = resample_to_10hz(trace_from(t, np.tile([0, 0, 1], (t.size, 1))), 0, 50)
    assert out.shape == (3, 500)
    np.testing.assert_array_equal(out, np.tile([[0], [0], [1]], (1, 500)))


def test_aligned_10hz_is_identity():
    t = np.arange(600) / 10.0
    xyz = np.random.default_rng(0).normal(size=(600, 3))
    np.testing.assert_array_equal(resample_to_10hz(trace_from(t, xyz), 0, 60), xyz.T)


def test_jittered_sine_matches_analytic():
    # linear interpolation error is bounded by h^2 w^2 / 8 ~ 4.8e-3 at 32 Hz, so jitter stays small
    rng = np.random.default_rng(7)
    t = np.arange(0, 120, 1 / 32) + rng.uniform(-0.02, 0.02, 120 * 32) / 32
    x = np.sin(2 * np.pi * t)
    out = resample_to_10hz(trace_from(t, np.column_stack([x, x, x])), 1, 119)
    grid = 1 + np.arange(out.shape[1]) / 10
    assert np.max(np.abs(out[0] - np.sin(2 * np.pi * grid))) < 5e-3


def test_long_gap_sample_and_hold():
    t = np.r_[np.arange(0, 10, 0.1), np.arange(20, 30, 0.1)]
    x = np.r_[np.zeros(100), np.ones(100)]
    x[99] = 5.0
    out, cov = resample_to_10hz(trace_from(t, np.column_stack([x, x, x])), 0, 30, return_coverage=True)
    # 9.9 .. 19.9 holds the last observed value across the 10.1 s gap
    np.testing.assert_allclose(out[0, 100:200], 5.0)
    assert cov == pytest.approx(200 / 300)


def test_low_coverage_rejected():
    t = np.arange(0, 10, 0.1)
    with pytest.raises(InsufficientCoverage):
        resample_to_10hz(trace_from(t, np.zeros((t.size, 3))), 0, 30)


def test_backfill_before_first_sample():
    t = np.arange(1, 10, 0.1)
    out = resample_to_10hz(trace_from(t, np.column_stack([t, t, t])), 0, 10)
    np.testing.assert_allclose(out[0, :10], 1.0)


@settings(max_examples=40, deadline=None)
@given(st.floats(-3, 3), st.floats(-3, 3), st.integers(0, 2**16))
def test_resampler_linearity(a, b, seed):
    rng = np.random.default_rng(seed)
    t = np.cumsum(rng.uniform(0.01, 0.2, 400))
    x, y = rng.normal(size=(400, 3)), rng.normal(size=(400, 3))
    t0, t1 = float(t[0]), float(t[0]) + 30
    lhs = resample_to_10hz(trace_from(t, a * x + b * y), t0, t1)
    rhs = a * resample_to_10hz(trace_from(t, x), t0, t1) + b * resample_to_10hz(trace_from(t, y), t0, t1)
    np.testing.assert_allclose(lhs, rhs, atol=1e-9)


def raw(values, pid="p"):
    data = np.array([values, values, values], dtype=float)
    return RawWindow(pid, 0.0, data)


def test_fit_scale_min_max():
    params = fit_scale([raw([-1, 0]), raw([3])], {"p"})
    assert params.minimum == (-1, -1, -1) and params.maximum == (3, 3, 3)


def test_fit_scale_degenerate_channel_named():
    data = np.array([[0.0, 1.0], [2.0, 2.0], [0.0, 1.0]])
    with pytest.raises(DegenerateChannel, match="channel y"):
        fit_scale([RawWindow("p", 0.0, data)], {"p"})


def test_fit_scale_refuses_test_windows():
    with pytest.raises(LeakageError):
        fit_scale([raw([0, 1], "dev"), raw([5, 6], "test")], {"dev"})


def test_apply_scale_examples():
    params = ScaleParams((2.0,) * 3, (6.0,) * 3)
    w = apply_scale(RawWindow("p", 0.0, np.array([[2.0, 6.0, 4.0, 1.0, 9.0]] * 3)), params)
    np.testing.assert_array_equal(w.data[0], [0.0, 1.0, 0.5, 0.0, 1.0])


@given(st.lists(st.floats(0, 1), min_size=1, max_size=20))
def test_scale_idempotent_on_unit_interval(values):
    data = np.array([values] * 3)
    np.testing.assert_array_equal(scale_array(data, ScaleParams((0.0,) * 3, (1.0,) * 3)), data)


def test_sample_window_bounds():
    with pytest.raises(ValueError):
        SampleWindow("p", 0.0, np.full((3, 4), 1.5))


def window(values):
    return SampleWindow("p", 0.0, np.array([values] * 3, dtype=float))


def test_decimate_examples():
    w = window([0, 1, 0, 1])
    assert decimate(w, 1).data is w.data
    np.testing.assert_array_equal(decimate(w, 2).data[0], [0.5, 0.5])
    assert decimate(w, 2).downsample_factor == 2
    with pytest.raises(ValueError):
        decimate(window([0, 1, 0]), 2)
    with pytest.raises(ValueError):
        decimate(w, 3)


def test_decimate_removes_nyquist_tone():
    tone = 0.5 + 0.25 * (-1.0) ** np.arange(64)
    out = decimate_array(tone[None, :], 2)
    np.testing.assert_allclose(out, 0.5)


@given(st.floats(0, 1), st.floats(0, 0.5), st.sampled_from([2, 4]))
def test_decimation_never_increases_variance(c, amp, factor):
    sig = np.clip(c + amp * (-1.0) ** np.arange(32), 0, 1)[None, :]
    assert decimate_array(sig, factor).var() <= sig.var() + 1e-15


def test_window_length_invariant():
    assert window_length(4) == 144000
    assert window_length(4, 4) == 36000
    assert window_length(0.1) == 3600


def test_cut_windows_examples():
    t = np.arange(0, 8 * 3600, 1.0)
    tr = trace_from(t, np.zeros((t.size, 3)))
    windows, rejected = cut_windows(tr, [3600.0, 4 * 3600.0])
    assert [r.reason for r in rejected] == ["insufficient_history"]
    assert len(windows) == 1 and windows[0].assessment_time == 4 * 3600.0
    assert windows[0].data.shape == (3, window_length(4))


def test_cut_windows_week_at_4h():
    t = np.arange(0, 7 * 86400 - 1, 5.0)
    tr = trace_from(t, np.zeros((t.size, 3)))
    windows, _ = cut_windows(tr, np.arange(1, 43) * 4 * 3600.0)
    assert len(windows) <= 42
    assert all(w.data.shape[1] == 144000 for w in windows)


def test_cut_windows_rejects_low_coverage_and_unsorted():
    t = np.r_[np.arange(0, 100, 0.1), np.arange(3000, 3600, 0.1)]
    tr = trace_from(t, np.zeros((t.size, 3)))
    windows, rejected = cut_windows(tr, [3600.0], window_hours=1.0)
    assert not windows and rejected[0].reason == "low_coverage"
    with pytest.raises(ValueError):
        cut_windows(tr, [7200.0, 3600.0], window_hours=1.0)


def test_dump_window_csv(tmp_path):
    path = dump_window_csv(window([0.0, 0.5, 1.0]), tmp_path / "w.csv")
    lines = path.read_text().splitlines()
    assert lines[0] == "t,x,y,z" and lines[2] == "0.100000,0.500000,0.500000,0.500000"
