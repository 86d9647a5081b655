"""Gait rhythm, stop-peak detection, and keypoint accuracy summaries.

All three are pure batch functions over arrays or frame sequences.  The
axial-force inputs follow the sign convention of the geometry module:
positive newtons push toward the dog.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Mapping, NamedTuple, Sequence

import numpy as np
from scipy import signal
from scipy.ndimage import uniform_filter1d

from .errors import (
    ConfigError,
    DataError,
    InsufficientDataError,
    PairingError,
    ValidationError,
)
from .ingest import KEYPOINT_NAMES, KeypointFrame

DETREND_WINDOW_S = 2.0
MIN_LAG_S = 1.0 / 3.0  # cadence band [0.5, 3.0] Hz as lag bounds
MAX_LAG_S = 2.0
MIN_GAIT_CONFIDENCE = 0.3
MIN_GAIT_SPAN_S = 4.0  # two cycles of the slowest cadence
PEAK_TIE_TOL = 0.05  # autocorrelation peaks this close count as tied
DEFAULT_STOP_THRESHOLD_N = 30.0
DEFAULT_STOP_HYSTERESIS_N = 5.0
DEFAULT_CONF_THRESHOLD = 0.25


@dataclass(frozen=True)
class GaitReport:
    cadence_hz: float
    amplitude_n: float
    confidence: float

    def __post_init__(self):
        if not 0.5 <= self.cadence_hz <= 3.0:
            raise ValidationError(f"cadence {self.cadence_hz} Hz outside [0.5, 3]")
        if self.amplitude_n < 0:
            raise ValidationError("amplitude_n must be >= 0")
        if not 0.0 <= self.confidence <= 1.0:
            raise ValidationError("confidence outside [0, 1]")

    def to_wire(self) -> dict:
        return {"cadence_hz": self.cadence_hz, "amplitude_n": self.amplitude_n,
                "confidence": self.confidence}


@dataclass(frozen=True)
class StopEvent:
    t_peak: float
    peak_n: float
    duration_s: float

    def to_wire(self) -> dict:
        return {"t_peak": self.t_peak, "peak_n": self.peak_n,
                "duration_s": self.duration_s}


def _as_series(t, x) -> tuple[np.ndarray, np.ndarray]:
    t = np.asarray(t, dtype=np.float64)
    x = np.asarray(x, dtype=np.float64)
    if t.shape != x.shape or t.ndim != 1:
        raise DataError("time and value arrays must be 1-d and equal length")
    if t.size >= 2 and np.any(np.diff(t) <= 0):
        raise DataError("series timestamps must be strictly increasing")
    return t, x


def analyze_gait(t, axial_n, window_s: float | None = None) -> GaitReport | None:
    """Cadence by the tallest autocorrelation peak with lag in
    [1/3, 2] s, after subtracting a 2 s rolling mean.  Returns None when
    the signal shows no credible rhythm (confidence < 0.3)."""
    t, x = _as_series(t, axial_n)
    if window_s is not None:
        keep = t >= t[-1] - window_s
        t, x = t[keep], x[keep]
    if t.size < 8 or t[-1] - t[0] < MIN_GAIT_SPAN_S:
        raise InsufficientDataError(
            f"need at least {MIN_GAIT_SPAN_S} s of samples for gait analysis")

    dt = float(np.median(np.diff(t)))
    grid = np.arange(t[0], t[-1], dt)
    xs = np.interp(grid, t, x)
    win = max(1, int(round(DETREND_WINDOW_S / dt)))
    d = xs - uniform_filter1d(xs, size=win, mode="nearest")

    n = d.size
    var = float(np.dot(d, d)) / n
    if var <= 1e-12:
        return None
    # unbiased autocorrelation over the cadence band only
    lo = max(1, int(math.ceil(MIN_LAG_S / dt)))
    hi = min(n - 2, int(math.floor(MAX_LAG_S / dt)))
    if hi <= lo:
        raise InsufficientDataError("series too short for the cadence band")
    full = np.correlate(d, d, mode="full")[n - 1:]
    counts = n - np.arange(n)
    ac = full / counts / var
    # a periodic signal peaks at every multiple of its period, so take
    # the shortest-lag peak among near-ties of the tallest
    peaks, _ = signal.find_peaks(ac[:hi + 2])
    peaks = peaks[(peaks >= lo) & (peaks <= hi)]
    if peaks.size == 0:
        return None
    tallest = float(ac[peaks].max())
    k = int(peaks[ac[peaks] >= tallest - PEAK_TIE_TOL][0])
    confidence = float(min(max(ac[k], 0.0), 1.0))
    if confidence < MIN_GAIT_CONFIDENCE:
        return None
    # parabolic refinement of the peak lag
    lag = float(k)
    if lo < k < hi:
        a, b, c = ac[k - 1], ac[k], ac[k + 1]
        denom = a - 2 * b + c
        if denom < 0:
            lag = k + 0.5 * (a - c) / denom
    lag_s = min(max(lag * dt, MIN_LAG_S), MAX_LAG_S)
    amplitude = float(np.percentile(d, 95) - np.percentile(d, 5)) / 2
    return GaitReport(cadence_hz=1.0 / lag_s, amplitude_n=amplitude,
                      confidence=confidence)


def detect_stops(t, axial_n,
                 threshold_n: float = DEFAULT_STOP_THRESHOLD_N,
                 hysteresis_n: float = DEFAULT_STOP_HYSTERESIS_N) -> list[StopEvent]:
    """Hysteresis event detector: an event opens when the push force
    exceeds ``threshold_n`` and closes when it falls below
    ``threshold_n - hysteresis_n``."""
    if not threshold_n > hysteresis_n > 0:
        raise ConfigError("need threshold_n > hysteresis_n > 0")
    t, x = _as_series(t, axial_n)
    close_n = threshold_n - hysteresis_n
    events: list[StopEvent] = []
    open_i: int | None = None
    peak_i = 0
    for i in range(t.size):
        if open_i is None:
            if x[i] > threshold_n:
                open_i, peak_i = i, i
        else:
            if x[i] > x[peak_i]:
                peak_i = i
            if x[i] < close_n:
                events.append(StopEvent(t_peak=float(t[peak_i]),
                                        peak_n=float(x[peak_i]),
                                        duration_s=float(t[i] - t[open_i])))
                open_i = None
    if open_i is not None:
        duration = float(t[-1] - t[open_i])
        if duration <= 0 and t.size >= 2:
            duration = float(np.median(np.diff(t)))
        events.append(StopEvent(t_peak=float(t[peak_i]),
                                peak_n=float(x[peak_i]),
                                duration_s=max(duration, 1e-9)))
    return events


class KeypointEval(NamedTuple):
    mean_abs_dx_px: float  # NaN when no frame has both prediction and label
    mean_abs_dy_px: float
    failure_pct: float
    n_matched: int


@dataclass(frozen=True)
class EvalReport:
    per_keypoint: Mapping[str, KeypointEval]
    n_frames: int

    def to_wire(self) -> dict:
        out = {"n_frames": self.n_frames, "keypoints": {}}
        for name, e in self.per_keypoint.items():
            out["keypoints"][name] = {
                "mean_abs_dx_px": None if math.isnan(e.mean_abs_dx_px)
                else round(e.mean_abs_dx_px, 2),
                "mean_abs_dy_px": None if math.isnan(e.mean_abs_dy_px)
                else round(e.mean_abs_dy_px, 2),
                "failure_pct": round(e.failure_pct, 2),
                "n_matched": e.n_matched,
            }
        return out

    def format_table(self) -> str:
        header = f"{'keypoint':<11} {'mean|dx|':>9} {'mean|dy|':>9} {'failure%':>9}"
        lines = [header, "-" * len(header)]
        for name, e in self.per_keypoint.items():
            dx = "-" if math.isnan(e.mean_abs_dx_px) else f"{e.mean_abs_dx_px:.2f}"
            dy = "-" if math.isnan(e.mean_abs_dy_px) else f"{e.mean_abs_dy_px:.2f}"
            lines.append(f"{name:<11} {dx:>9} {dy:>9} {e.failure_pct:>9.2f}")
        lines.append(f"frames: {self.n_frames}")
        return "\n".join(lines)


def evaluate_keypoints(predictions: Sequence[KeypointFrame],
                       labels: Sequence[KeypointFrame],
                       conf_threshold: float = DEFAULT_CONF_THRESHOLD) -> EvalReport:
    """Per-keypoint mean absolute pixel error over frames where both
    sides have the keypoint, and failure percentage (absent or below the
    confidence threshold) over all paired frames."""
    pred_by_t = {f.t: f for f in predictions}
    label_by_t = {f.t: f for f in labels}
    if len(pred_by_t) != len(predictions) or len(label_by_t) != len(labels):
        raise PairingError("duplicate timestamps in input", offenders=[])
    extra_pred = sorted(set(pred_by_t) - set(label_by_t))
    extra_label = sorted(set(label_by_t) - set(pred_by_t))
    if extra_pred or extra_label:
        raise PairingError(
            "prediction/label timestamps do not pair up",
            offenders=extra_pred + extra_label)
    times = sorted(pred_by_t)
    if not times:
        raise InsufficientDataError("no frames to evaluate")
    mismatched = [t for t in times if pred_by_t[t].view != label_by_t[t].view]
    if mismatched:
        raise PairingError("view config differs between prediction and label",
                           offenders=mismatched)

    n_frames = len(times)
    per: dict[str, KeypointEval] = {}
    for name in KEYPOINT_NAMES:
        dx, dy = [], []
        failures = 0
        for t in times:
            p = pred_by_t[t].kp.get(name)
            lab = label_by_t[t].kp.get(name)
            if p is None or p.conf < conf_threshold:
                failures += 1
            if p is not None and lab is not None:
                dx.append(abs(p.u - lab.u))
                dy.append(abs(p.v - lab.v))
        per[name] = KeypointEval(
            mean_abs_dx_px=float(np.mean(dx)) if dx else math.nan,
            mean_abs_dy_px=float(np.mean(dy)) if dy else math.nan,
            failure_pct=100.0 * failures / n_frames,
            n_matched=len(dx))
    return EvalReport(per_keypoint=per, n_frames=n_frames)
