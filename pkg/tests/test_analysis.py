import math

import numpy as np
import pytest

from harnesslab.analysis import (
    EvalReport,
    GaitReport,
    StopEvent,
    analyze_gait,
    detect_stops,
    evaluate_keypoints,
)
from harnesslab.errors import (
    ConfigError,
    InsufficientDataError,
    PairingError,
    ValidationError,
)
from harnesslab.ingest import KEYPOINT_NAMES, Keypoint, KeypointFrame
from harnesslab.projection import ViewConfig

VIEW = ViewConfig.from_degrees(0.0, -45.0, 100.0)


def sine(freq=1.0, amp=20.0, dur=30.0, rate=100.0, offset=0.0):
    t = np.arange(0.0, dur, 1.0 / rate)
    return t, offset + amp * np.sin(2 * np.pi * freq * t)


class TestAnalyzeGait:
    def test_pure_sine(self):
        t, x = sine(freq=1.0, amp=20.0)
        r = analyze_gait(t, x)
        assert r is not None
        assert r.cadence_hz == pytest.approx(1.0, abs=0.05)
        assert r.amplitude_n == pytest.approx(20.0, abs=2.0)
        assert r.confidence > 0.8

    def test_constant_signal_is_no_gait(self):
        t = np.arange(0, 30, 0.01)
        assert analyze_gait(t, np.full_like(t, 10.0)) is None

    def test_noisy_sine(self):
        rng = np.random.default_rng(17)
        t, x = sine(freq=1.0, amp=20.0)
        r = analyze_gait(t, x + rng.normal(0, 3.0, t.size))
        assert r is not None
        assert r.cadence_hz == pytest.approx(1.0, abs=0.05)

    def test_offset_invariance(self):
        t, x = sine(freq=1.2, amp=15.0)
        base = analyze_gait(t, x)
        shifted = analyze_gait(t, x + 37.0)
        assert shifted.cadence_hz == pytest.approx(base.cadence_hz, abs=1e-9)

    def test_amplitude_scales_linearly(self):
        t, x = sine(freq=1.0, amp=8.0)
        a = analyze_gait(t, x).amplitude_n
        b = analyze_gait(t, 2.5 * x).amplitude_n
        assert b == pytest.approx(2.5 * a, rel=0.01)

    @pytest.mark.parametrize("freq", [0.6, 1.0, 1.7, 2.5])
    def test_cadence_band(self, freq):
        t, x = sine(freq=freq, amp=20.0, dur=40.0)
        r = analyze_gait(t, x)
        assert r.cadence_hz == pytest.approx(freq, rel=0.05)

    def test_nonuniform_sampling(self):
        rng = np.random.default_rng(19)
        t = np.sort(rng.uniform(0, 30, 2000))
        t = t[np.diff(t, prepend=-1) > 1e-4]
        x = 20 * np.sin(2 * np.pi * 1.0 * t)
        r = analyze_gait(t, x)
        assert r.cadence_hz == pytest.approx(1.0, abs=0.05)

    def test_window_selects_recent_signal(self):
        t = np.arange(0, 40, 0.01)
        x = np.where(t < 20, 20 * np.sin(2 * np.pi * 0.7 * t),
                     20 * np.sin(2 * np.pi * 1.4 * t))
        r = analyze_gait(t, x, window_s=10.0)
        assert r.cadence_hz == pytest.approx(1.4, abs=0.07)

    def test_too_short_series(self):
        t, x = sine(dur=2.0)
        with pytest.raises(InsufficientDataError):
            analyze_gait(t, x)

    def test_report_invariants(self):
        with pytest.raises(ValidationError):
            GaitReport(cadence_hz=4.0, amplitude_n=1.0, confidence=0.5)
        with pytest.raises(ValidationError):
            GaitReport(cadence_hz=1.0, amplitude_n=-1.0, confidence=0.5)


def pulse(t, center, peak, width_s=0.3):
    sigma = width_s / 2.355  # fwhm -> sigma
    return peak * np.exp(-0.5 * ((t - center) / sigma) ** 2)


class TestDetectStops:
    def test_single_pulse_on_gait(self):
        t = np.arange(0, 20, 0.01)
        gait = 20 * np.sin(2 * np.pi * t)
        g = pulse(t, 10.0, 1.0)
        x = gait * (1 - g) + 32.0 * g  # crossfade so the peak is exact
        events = detect_stops(t, x)
        assert len(events) == 1
        assert events[0].peak_n == pytest.approx(32.0, abs=0.5)
        assert events[0].t_peak == pytest.approx(10.0, abs=0.1)
        assert events[0].duration_s > 0

    def test_below_threshold_is_quiet(self):
        t = np.arange(0, 20, 0.01)
        events = detect_stops(t, 28 * np.sin(2 * np.pi * t))
        assert events == []

    def test_hysteresis_holds_through_shallow_dip(self):
        # dip to 26 N stays above the 25 N close level: still one event
        t = np.arange(0, 6, 0.01)
        x = np.interp(t, [0, 1, 2, 3, 4, 5, 6], [0, 35, 26, 35, 26, 35, 0])
        assert len(detect_stops(t, x)) == 1

    def test_dip_below_close_level_splits_events(self):
        t = np.arange(0, 4, 0.01)
        x = np.interp(t, [0, 1, 2, 3, 4], [0, 35, 22, 35, 0])
        events = detect_stops(t, x)
        assert len(events) == 2
        assert all(e.peak_n == pytest.approx(35.0, abs=0.5) for e in events)

    def test_time_translation_invariance(self):
        t = np.arange(0, 20, 0.01)
        x = 20 * np.sin(2 * np.pi * t) + pulse(t, 8.0, 14.0)
        a = detect_stops(t, x)
        b = detect_stops(t + 1000.0, x)
        assert len(a) == len(b)
        for ea, eb in zip(a, b):
            assert eb.t_peak == pytest.approx(ea.t_peak + 1000.0, abs=1e-9)
            assert eb.peak_n == ea.peak_n

    def test_starts_above_threshold(self):
        t = np.arange(0, 2, 0.01)
        x = np.interp(t, [0, 1, 2], [40, 40, 0])
        events = detect_stops(t, x)
        assert len(events) == 1
        assert events[0].peak_n == pytest.approx(40.0)

    def test_open_event_at_end_is_closed(self):
        t = np.arange(0, 2, 0.01)
        x = np.interp(t, [0, 1, 2], [0, 20, 45])
        events = detect_stops(t, x)
        assert len(events) == 1
        assert events[0].duration_s > 0

    def test_matches_reference_state_machine(self):
        """Independent hysteresis oracle on rough random signals."""
        rng = np.random.default_rng(23)
        for _ in range(15):
            t = np.arange(0, 30, 0.01)
            raw = rng.normal(0, 1, t.size)
            smooth = np.convolve(raw, np.ones(80) / 80, mode="same")
            x = 35 * smooth / np.abs(smooth).max() + 10
            got = detect_stops(t, x)
            want = []
            armed, peak, t0 = True, None, None
            for ti, xi in zip(t, x):
                if armed and xi > 30:
                    armed, peak, t0 = False, (ti, xi), ti
                elif not armed:
                    if xi > peak[1]:
                        peak = (ti, xi)
                    if xi < 25:
                        want.append((peak[0], peak[1]))
                        armed = True
            if not armed:
                want.append((peak[0], peak[1]))
            assert len(got) == len(want)
            for e, (tp, pn) in zip(got, want):
                assert e.t_peak == tp and e.peak_n == pn

    def test_bad_params(self):
        t = np.arange(0, 1, 0.01)
        with pytest.raises(ConfigError):
            detect_stops(t, np.zeros_like(t), threshold_n=5, hysteresis_n=5)


def frames(n, drop=(), displace=(), conf=0.9, t0=0.0):
    """n frames with all keypoints at fixed pixels; drop[(i, name)] removes
    one, displace[name] shifts predictions by (du, dv)."""
    out = []
    base = {name: (100.0 + 30 * j, 200.0)
            for j, name in enumerate(KEYPOINT_NAMES)}
    for i in range(n):
        kp = {}
        for name in KEYPOINT_NAMES:
            if (i, name) in drop:
                kp[name] = None
                continue
            u, v = base[name]
            du, dv = displace.get(name, (0.0, 0.0)) if displace else (0.0, 0.0)
            kp[name] = Keypoint(u + du, v + dv, conf)
        out.append(KeypointFrame(t=t0 + 0.1 * i, view=VIEW, kp=kp))
    return out


class TestEvaluateKeypoints:
    def test_identical_inputs(self):
        labels = frames(10)
        r = evaluate_keypoints(frames(10), labels)
        assert r.n_frames == 10
        for name in KEYPOINT_NAMES:
            e = r.per_keypoint[name]
            assert e.mean_abs_dx_px == 0.0
            assert e.mean_abs_dy_px == 0.0
            assert e.failure_pct == 0.0
            assert e.n_matched == 10

    def test_one_missing_of_48(self):
        preds = frames(48, drop={(7, "right_leg")})
        r = evaluate_keypoints(preds, frames(48))
        f = r.per_keypoint["right_leg"].failure_pct
        assert f == pytest.approx(100.0 / 48.0)
        assert round(f, 2) == 2.08

    def test_seven_missing_of_48(self):
        preds = frames(48, drop={(i, "tail") for i in range(7)})
        r = evaluate_keypoints(preds, frames(48))
        f = r.per_keypoint["tail"].failure_pct
        assert f == pytest.approx(700.0 / 48.0)
        assert round(f, 2) == 14.58

    def test_constructed_tail_displacement(self):
        preds = frames(48, displace={"tail": (11.2, 3.4)})
        r = evaluate_keypoints(preds, frames(48))
        assert r.per_keypoint["tail"].mean_abs_dx_px == pytest.approx(11.2,
                                                                     abs=1e-9)
        assert r.per_keypoint["tail"].mean_abs_dy_px == pytest.approx(3.4,
                                                                     abs=1e-9)
        assert r.per_keypoint["head"].mean_abs_dx_px == 0.0

    def test_sign_symmetry(self):
        a = evaluate_keypoints(frames(20, displace={"head": (4.0, -2.0)}),
                               frames(20))
        b = evaluate_keypoints(frames(20, displace={"head": (-4.0, 2.0)}),
                               frames(20))
        assert a.per_keypoint["head"] == b.per_keypoint["head"]

    def test_low_confidence_counts_as_failure(self):
        preds = frames(10, conf=0.1)
        r = evaluate_keypoints(preds, frames(10))
        e = r.per_keypoint["head"]
        assert e.failure_pct == 100.0
        assert e.n_matched == 10  # still present, so errors are measured

    def test_random_patterns_match_counter(self):
        rng = np.random.default_rng(29)
        for _ in range(10):
            n = int(rng.integers(5, 40))
            drop = {(int(i), name) for name in KEYPOINT_NAMES
                    for i in range(n) if rng.random() < 0.2}
            r = evaluate_keypoints(frames(n, drop=drop), frames(n))
            for name in KEYPOINT_NAMES:
                want = sum(1 for i in range(n) if (i, name) in drop)
                assert r.per_keypoint[name].failure_pct == pytest.approx(
                    100.0 * want / n)
                assert r.per_keypoint[name].n_matched == n - want

    def test_unpaired_timestamps_listed(self):
        with pytest.raises(PairingError) as e:
            evaluate_keypoints(frames(4), frames(4, t0=100.0))
        assert len(e.value.offenders) == 8
        assert "100" in str(e.value)

    def test_view_mismatch_rejected(self):
        labels = frames(4)
        other = ViewConfig.from_degrees(10.0, -45.0, 100.0)
        preds = [KeypointFrame(t=f.t, view=other, kp=f.kp) for f in labels]
        with pytest.raises(PairingError):
            evaluate_keypoints(preds, labels)

    def test_empty_inputs_rejected(self):
        with pytest.raises(InsufficientDataError):
            evaluate_keypoints([], [])

    def test_all_missing_means_nan(self):
        preds = frames(5, drop={(i, "grip") for i in range(5)})
        r = evaluate_keypoints(preds, frames(5))
        assert math.isnan(r.per_keypoint["grip"].mean_abs_dx_px)
        assert r.per_keypoint["grip"].failure_pct == 100.0
        wire = r.to_wire()
        assert wire["keypoints"]["grip"]["mean_abs_dx_px"] is None

    def test_table_rendering(self):
        r = evaluate_keypoints(frames(48, drop={(i, "tail") for i in range(7)}),
                               frames(48))
        table = r.format_table()
        assert "14.58" in table
        assert "tail" in table
