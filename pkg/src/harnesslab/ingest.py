"""Parsing, validation, and time alignment of the two input streams.

Wire formats (JSON Lines, UTF-8, one record per line; identical over UDP,
one record per datagram):

  force:    {"t": 1.25, "f": [fx, fy, fz], "m": [mx, my, mz]}
            newtons / newton-meters in the sensor frame, sensor clock
  keypoint: {"t": 0.73,
             "view": {"yaw_deg": 0, "pitch_deg": -45, "hfov_deg": 100,
                      "size_px": 416},
             "kp": {"left_leg": [u, v, conf] | null, "right_leg": ...,
                    "head": ..., "tail": ..., "handle": ..., "grip": ...}}
            pixels in the perspective view, camera clock

A malformed line is reported (parse error with byte offset) and the
stream continues at the next line; drops are counted in StreamStats.
"""

from __future__ import annotations

import bisect
import json
import logging
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Iterator, Mapping, NamedTuple

import numpy as np

from .errors import DataError, ParseError, ValidationError
from .projection import ViewConfig
from .timesync import TimeMapping, apply_mapping

log = logging.getLogger(__name__)

KEYPOINT_NAMES = ("left_leg", "right_leg", "head", "tail", "handle", "grip")

FORCE_SANITY_N = 1000.0
DEFAULT_STALENESS_S = 0.25
DEFAULT_REORDER_WINDOW_S = 1.0

Vec3 = tuple[float, float, float]


@dataclass(frozen=True)
class RatedLoad:
    """Sensor rating used for the software overload flag."""

    force_n: float = 200.0
    torque_nm: float = 10.0


DEFAULT_RATED_LOAD = RatedLoad()


@dataclass(frozen=True)
class ForceSample:
    t: float
    f: Vec3
    m: Vec3
    overload: bool = False

    def magnitude(self) -> float:
        return math.sqrt(self.f[0] ** 2 + self.f[1] ** 2 + self.f[2] ** 2)


class Keypoint(NamedTuple):
    u: float
    v: float
    conf: float


@dataclass(frozen=True)
class KeypointFrame:
    t: float
    view: ViewConfig
    kp: Mapping[str, Keypoint | None]  # keys are exactly KEYPOINT_NAMES

    def present(self, name: str) -> Keypoint | None:
        return self.kp.get(name)


class StatsSnapshot(NamedTuple):
    samples_seen: int
    samples_dropped: int
    rate_hz: float
    last_t: float


class StreamStats:
    """Mutable per-stream counters; hand out read-only snapshots."""

    def __init__(self):
        self.samples_seen = 0
        self.samples_dropped = 0
        self._first_t: float | None = None
        self._last_t: float | None = None

    def saw(self, t: float | None = None) -> None:
        self.samples_seen += 1
        if t is not None:
            if self._first_t is None:
                self._first_t = t
            self._last_t = t

    def dropped(self, n: int = 1) -> None:
        self.samples_dropped += n

    @property
    def rate_hz(self) -> float:
        good = self.samples_seen - self.samples_dropped
        if good < 2 or self._last_t is None or self._last_t <= self._first_t:
            return 0.0
        return (good - 1) / (self._last_t - self._first_t)

    def snapshot(self) -> StatsSnapshot:
        return StatsSnapshot(self.samples_seen, self.samples_dropped,
                             self.rate_hz,
                             self._last_t if self._last_t is not None else 0.0)


def _finite3(value, what: str, offset: int) -> Vec3:
    if not isinstance(value, (list, tuple)) or len(value) != 3:
        raise ParseError(f"{what} must be a 3-element array", offset)
    out = tuple(float(x) for x in value)
    if not all(math.isfinite(x) for x in out):
        raise ValidationError(f"non-finite value in {what}")
    return out


def parse_force_record(line: bytes | str, rated: RatedLoad = DEFAULT_RATED_LOAD,
                       offset: int = 0) -> ForceSample:
    """Parse one force wire record; the overload flag is computed against
    the configured rated load."""
    try:
        obj = json.loads(line)
    except json.JSONDecodeError as e:
        raise ParseError(f"bad force record: {e.msg}", offset + e.pos) from e
    if not isinstance(obj, dict) or "t" not in obj or "f" not in obj or "m" not in obj:
        raise ParseError("force record needs keys t, f, m", offset)
    t = float(obj["t"])
    if not math.isfinite(t):
        raise ValidationError("non-finite timestamp in force record")
    f = _finite3(obj["f"], "f", offset)
    m = _finite3(obj["m"], "m", offset)
    if math.sqrt(sum(x * x for x in f)) >= FORCE_SANITY_N:
        raise ValidationError(f"|f| exceeds sanity bound {FORCE_SANITY_N} N")
    overload = any(abs(x) > rated.force_n for x in f) \
        or any(abs(x) > rated.torque_nm for x in m)
    return ForceSample(t=t, f=f, m=m, overload=overload)


def serialize_force_record(sample: ForceSample) -> str:
    return json.dumps({"t": sample.t, "f": list(sample.f), "m": list(sample.m)},
                      separators=(",", ":"))


def parse_keypoint_record(line: bytes | str, offset: int = 0) -> KeypointFrame:
    """Parse one keypoint wire record.  Unknown keypoint names are
    rejected; missing keypoints (null or omitted) are allowed."""
    try:
        obj = json.loads(line)
    except json.JSONDecodeError as e:
        raise ParseError(f"bad keypoint record: {e.msg}", offset + e.pos) from e
    if not isinstance(obj, dict) or "t" not in obj or "view" not in obj \
            or "kp" not in obj:
        raise ParseError("keypoint record needs keys t, view, kp", offset)
    t = float(obj["t"])
    if not math.isfinite(t):
        raise ValidationError("non-finite timestamp in keypoint record")
    try:
        view = ViewConfig.from_wire(obj["view"])
    except (KeyError, TypeError) as e:
        raise ParseError(f"bad view config: {e}", offset) from e

    kp: dict[str, Keypoint | None] = {name: None for name in KEYPOINT_NAMES}
    for name, value in obj["kp"].items():
        if name not in KEYPOINT_NAMES:
            raise ValidationError(f"unknown keypoint name {name!r}")
        if value is None:
            continue
        if not isinstance(value, (list, tuple)) or len(value) != 3:
            raise ParseError(f"keypoint {name} must be [u, v, conf] or null",
                             offset)
        u, v, conf = (float(x) for x in value)
        if not all(math.isfinite(x) for x in (u, v, conf)):
            raise ValidationError(f"non-finite coordinate in keypoint {name}")
        if not (0 <= u <= view.size_px and 0 <= v <= view.size_px):
            raise ValidationError(
                f"keypoint {name} at ({u}, {v}) outside {view.size_px}px view")
        if not 0.0 <= conf <= 1.0:
            raise ValidationError(f"keypoint {name} confidence {conf} outside [0, 1]")
        kp[name] = Keypoint(u, v, conf)
    return KeypointFrame(t=t, view=view, kp=kp)


def serialize_keypoint_record(frame: KeypointFrame) -> str:
    kp = {
        name: (list(p) if (p := frame.kp.get(name)) is not None else None)
        for name in KEYPOINT_NAMES
    }
    return json.dumps({"t": frame.t, "view": frame.view.to_wire(), "kp": kp},
                      separators=(",", ":"))


def _iter_jsonl(path: str | Path, parse, stats: StreamStats | None) -> Iterator:
    offset = 0
    with open(path, "rb") as fh:
        for line in fh:
            start = offset
            offset += len(line)
            if not line.strip():
                continue
            try:
                record = parse(line, offset=start)
            except (ParseError, ValidationError) as e:
                log.warning("%s: skipping record: %s", path, e)
                if stats is not None:
                    stats.saw()
                    stats.dropped()
                continue
            if stats is not None:
                stats.saw(record.t)
            yield record


def iter_force_file(path: str | Path, rated: RatedLoad = DEFAULT_RATED_LOAD,
                    stats: StreamStats | None = None) -> Iterator[ForceSample]:
    return _iter_jsonl(path, lambda line, offset: parse_force_record(
        line, rated=rated, offset=offset), stats)


def read_force_file(path: str | Path, rated: RatedLoad = DEFAULT_RATED_LOAD,
                    stats: StreamStats | None = None) -> list[ForceSample]:
    return list(iter_force_file(path, rated, stats))


def iter_keypoint_file(path: str | Path,
                       stats: StreamStats | None = None) -> Iterator[KeypointFrame]:
    return _iter_jsonl(path, parse_keypoint_record, stats)


def read_keypoint_file(path: str | Path,
                       stats: StreamStats | None = None) -> list[KeypointFrame]:
    return list(iter_keypoint_file(path, stats))


class AlignedSample(NamedTuple):
    frame: KeypointFrame
    t_sensor: float
    force: ForceSample  # interpolated at t_sensor (sensor clock)
    stale: bool


def _lerp3(a: Vec3, b: Vec3, w: float) -> Vec3:
    return (a[0] + (b[0] - a[0]) * w,
            a[1] + (b[1] - a[1]) * w,
            a[2] + (b[2] - a[2]) * w)


def interpolate_force(t_sorted: np.ndarray, samples: list[ForceSample],
                      ts: float, staleness_s: float) -> tuple[ForceSample, bool]:
    """Linear interpolation of the force stream at sensor time ``ts``.

    Returns (sample, stale).  Outside the series or across a gap wider
    than ``staleness_s`` the nearest sample's values are held and the
    stale flag is set according to the distance/gap.
    """
    n = len(samples)
    if n == 0:
        return ForceSample(ts, (0.0, 0.0, 0.0), (0.0, 0.0, 0.0)), True
    i = int(np.searchsorted(t_sorted, ts))
    if i == 0:
        near = samples[0]
        stale = (t_sorted[0] - ts) > staleness_s
        return ForceSample(ts, near.f, near.m, near.overload), stale
    if i == n:
        near = samples[-1]
        stale = (ts - t_sorted[-1]) > staleness_s
        return ForceSample(ts, near.f, near.m, near.overload), stale
    lo, hi = samples[i - 1], samples[i]
    gap = hi.t - lo.t
    if gap > staleness_s:
        near = lo if (ts - lo.t) <= (hi.t - ts) else hi
        return ForceSample(ts, near.f, near.m, near.overload), True
    w = 0.0 if gap == 0 else (ts - lo.t) / gap
    return ForceSample(ts, _lerp3(lo.f, hi.f, w), _lerp3(lo.m, hi.m, w),
                       lo.overload or hi.overload), False


def align(force_stream: Iterable[ForceSample],
          keypoint_stream: Iterable[KeypointFrame],
          mapping: TimeMapping,
          staleness_s: float = DEFAULT_STALENESS_S) -> Iterator[AlignedSample]:
    """Emit, for each keypoint frame, the force interpolated at the
    frame's sensor-clock time.  Gaps wider than ``staleness_s`` around the
    mapped time produce a stale flag instead of interpolating across."""
    samples = list(force_stream)
    t_sorted = np.array([s.t for s in samples], dtype=np.float64)
    if np.any(np.diff(t_sorted) < 0):
        raise DataError("force stream is not time-ordered")
    last_kp_t = -math.inf
    for frame in keypoint_stream:
        if frame.t < last_kp_t:
            raise DataError("keypoint stream is not time-ordered")
        last_kp_t = frame.t
        ts = float(apply_mapping(frame.t, mapping))
        force, stale = interpolate_force(t_sorted, samples, ts, staleness_s)
        yield AlignedSample(frame=frame, t_sensor=ts, force=force, stale=stale)


class ForceWindow:
    """Sorted sliding window of recent force samples for live fusion.

    Out-of-order arrivals within ``window_s`` of the newest sample are
    inserted in place; older arrivals are rejected (the caller counts the
    drop).  Interpolation reads the sorted window with the same rules as
    the batch path.
    """

    def __init__(self, window_s: float = DEFAULT_REORDER_WINDOW_S):
        self.window_s = window_s
        self._t: list[float] = []
        self._samples: list[ForceSample] = []

    def __len__(self) -> int:
        return len(self._t)

    @property
    def newest_t(self) -> float:
        return self._t[-1] if self._t else -math.inf

    def push(self, sample: ForceSample) -> bool:
        if self._t and sample.t < self._t[-1] - self.window_s:
            return False
        i = bisect.bisect_right(self._t, sample.t)
        self._t.insert(i, sample.t)
        self._samples.insert(i, sample)
        cutoff = self._t[-1] - self.window_s
        drop = bisect.bisect_left(self._t, cutoff)
        if drop > 0:
            del self._t[:drop]
            del self._samples[:drop]
        return True

    def interpolate(self, ts: float,
                    staleness_s: float = DEFAULT_STALENESS_S) -> tuple[ForceSample, bool]:
        return interpolate_force(np.asarray(self._t), self._samples, ts,
                                 staleness_s)
