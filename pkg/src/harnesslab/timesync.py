"""Tap-based clock synchronization.

The trainer raps the handle a few times at the start of a session; the
raps show up as sharp spikes in the force magnitude and as an externally
supplied event list on the camera timeline (from handle-keypoint motion
energy or manual annotation).  Matching the two event sets gives the
camera-to-sensor clock mapping.

Camera-side events arrive as a JSON file: ``[{"t": seconds, "mag": n}]``.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, NamedTuple, Sequence

import numpy as np
from scipy import ndimage, signal

from .errors import (
    ConfigError,
    DataError,
    InsufficientEventsError,
    SyncFailedError,
)

DEFAULT_THRESHOLD_N = 5.0
DEFAULT_REFRACTORY_S = 0.2
DEFAULT_MAX_OFFSET_S = 10.0
BASELINE_WINDOW_S = 2.0  # rolling-median window for the spike baseline

# Below this camera-tap span a drift slope cannot be told from jitter, so
# the fit is skipped and drift stays 1.0.
MIN_DRIFT_SPAN_S = 10.0
DRIFT_BAND = 0.01  # |drift - 1| beyond this is rejected as a bad fit


class TapEvent(NamedTuple):
    """One detected tap: time on the source clock, spike magnitude."""

    t: float
    mag: float


@dataclass(frozen=True)
class TimeMapping:
    """Affine camera-to-sensor clock mapping: t_sensor = drift*t_cam + offset."""

    offset_s: float
    drift: float = 1.0
    residual_rms_s: float = 0.0

    def __post_init__(self):
        if not 0.99 <= self.drift <= 1.01:
            raise ConfigError(f"drift {self.drift} outside [0.99, 1.01]")
        if self.residual_rms_s < 0:
            raise ConfigError("residual_rms_s must be >= 0")

    def to_wire(self) -> dict:
        return {
            "offset_s": self.offset_s,
            "drift": self.drift,
            "residual_rms_s": self.residual_rms_s,
        }

    @classmethod
    def from_wire(cls, d: dict) -> "TimeMapping":
        return cls(float(d["offset_s"]), float(d.get("drift", 1.0)),
                   float(d.get("residual_rms_s", 0.0)))


def apply_mapping(t_camera, mapping: TimeMapping):
    """Camera-clock seconds to sensor-clock seconds."""
    return mapping.drift * t_camera + mapping.offset_s


def invert_mapping(t_sensor, mapping: TimeMapping):
    """Sensor-clock seconds back to camera-clock seconds."""
    return (t_sensor - mapping.offset_s) / mapping.drift


def detect_taps(force_series: Sequence, threshold_n: float = DEFAULT_THRESHOLD_N,
                refractory_s: float = DEFAULT_REFRACTORY_S) -> list[TapEvent]:
    """Find tap spikes in a time-ordered force stream.

    A tap is a local maximum of force magnitude that exceeds the rolling
    2 s median baseline by at least ``threshold_n``, with consecutive taps
    separated by at least ``refractory_s``.
    """
    if threshold_n <= 0 or refractory_s <= 0:
        raise ConfigError("threshold_n and refractory_s must be positive")
    samples = list(force_series)
    if not samples:
        return []
    t = np.array([s.t for s in samples], dtype=np.float64)
    if np.any(np.diff(t) < 0):
        raise DataError("force series timestamps are not time-ordered")
    mag = np.linalg.norm(np.array([s.f for s in samples], dtype=np.float64), axis=1)
    if len(samples) < 3:
        return []  # no interior local maximum possible

    dt = float(np.median(np.diff(t)))
    if dt <= 0:
        raise DataError("force series has zero time step")
    win = int(round(BASELINE_WINDOW_S / dt)) | 1  # odd
    baseline = ndimage.median_filter(mag, size=min(win, len(mag) | 1),
                                     mode="nearest")
    distance = max(1, math.ceil(refractory_s / dt))
    peaks, _ = signal.find_peaks(mag, height=baseline + threshold_n,
                                 distance=distance)
    return [TapEvent(float(t[i]), float(mag[i])) for i in peaks]


def estimate_mapping(camera_taps: Iterable[TapEvent],
                     sensor_taps: Iterable[TapEvent],
                     max_offset_s: float = DEFAULT_MAX_OFFSET_S,
                     match_window_s: float = 0.5) -> TimeMapping:
    """Estimate the clock mapping from two tap event sets.

    Every pairwise camera/sensor time difference within ``max_offset_s``
    is a candidate offset.  The candidate that matches the most camera
    taps to nearby sensor taps (ties broken by total matched distance)
    fixes the pairing; the offset is the median of the drift-corrected
    pair differences, which keeps one mismatched tap from skewing the
    result.  Drift is fitted by least squares only when there are at
    least 3 pairs spanning enough time for a slope to mean anything.
    """
    cam = np.sort(np.array([e.t for e in camera_taps], dtype=np.float64))
    sen = np.sort(np.array([e.t for e in sensor_taps], dtype=np.float64))
    if len(cam) < 2 or len(sen) < 2:
        raise InsufficientEventsError(
            f"need >= 2 taps on each side, got {len(cam)} camera / {len(sen)} sensor")

    cands = (sen[None, :] - cam[:, None]).ravel()
    cands = np.unique(cands[np.abs(cands) <= max_offset_s])
    if cands.size == 0:
        raise SyncFailedError(f"no tap pairs within +/-{max_offset_s} s")

    best = None  # (count, -total_dist, offset, matched_cam, matched_sen)
    for d in cands:
        shifted = cam + d
        idx = np.searchsorted(sen, shifted)
        lo = np.clip(idx - 1, 0, len(sen) - 1)
        hi = np.clip(idx, 0, len(sen) - 1)
        pick = np.where(np.abs(sen[hi] - shifted) < np.abs(sen[lo] - shifted),
                        hi, lo)
        dist = np.abs(sen[pick] - shifted)
        matched = dist <= match_window_s
        count = int(matched.sum())
        key = (count, -float(dist[matched].sum()))
        if best is None or key > best[0]:
            best = (key, cam[matched], sen[pick][matched])

    (count, _), cam_m, sen_m = best
    if count < 2:
        raise SyncFailedError("no consistent tap matching found")

    drift = 1.0
    if count >= 3 and (cam_m.max() - cam_m.min()) >= MIN_DRIFT_SPAN_S:
        slope = float(np.polyfit(cam_m, sen_m, 1)[0])
        if abs(slope - 1.0) <= DRIFT_BAND:
            drift = slope
    offset = float(np.median(sen_m - drift * cam_m))
    resid = drift * cam_m + offset - sen_m
    rms = float(np.sqrt(np.mean(resid ** 2)))
    return TimeMapping(offset_s=offset, drift=drift, residual_rms_s=rms)


def load_tap_events(path: str | Path) -> list[TapEvent]:
    raw = json.loads(Path(path).read_text())
    if not isinstance(raw, list):
        raise DataError(f"{path}: tap event file must be a JSON array")
    events = []
    for item in raw:
        t, mag = float(item["t"]), float(item.get("mag", 1.0))
        if not math.isfinite(t) or mag <= 0:
            raise DataError(f"{path}: bad tap event {item!r}")
        events.append(TapEvent(t, mag))
    return events


def save_tap_events(events: Iterable[TapEvent], path: str | Path) -> None:
    data = [{"t": e.t, "mag": e.mag} for e in events]
    Path(path).write_text(json.dumps(data, indent=2) + "\n")
