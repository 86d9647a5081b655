"""Session manifests, stream fusion, recording, and replay pacing.

The fused flow runs on the force clock: one FusedSample per force
sample, carrying the axial force, the pose from the most recent keypoint
frame whose mapped time is at or before the sample (held up to the
staleness budget), and event flags.  Flag trackers are causal state
machines over the force sequence alone, so the live path and the batch
path produce identical output for identical inputs; replaying a session
at any speed yields the same byte sequence.
"""

from __future__ import annotations

import json
import math
import time
from collections import deque
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Callable, Iterable, Iterator

from .analysis import (
    DEFAULT_STOP_HYSTERESIS_N,
    DEFAULT_STOP_THRESHOLD_N,
    GaitReport,
    StopEvent,
)
from .errors import DataError, NotSyncedError, RecordingError, ValidationError
from .geometry import (
    QUALITY_UNAVAILABLE,
    UNAVAILABLE_POSE,
    Calibration,
    PoseEstimate,
    axial_force,
    relative_angle,
)
from .ingest import (
    DEFAULT_STALENESS_S,
    ForceSample,
    KeypointFrame,
    StreamStats,
)
from .timesync import TimeMapping, apply_mapping

FLAG_ORDER = ("stale", "overload", "tap", "stop")
TAP_FLAG_THRESHOLD_N = 5.0  # lateral (off-axis) force that reads as a tap

SESSION_FILE = "session.json"


@dataclass(frozen=True)
class FusedSample:
    t: float  # sensor clock
    force_n: tuple[float, float, float]
    torque_nm: tuple[float, float, float]
    axial_n: float
    pose: PoseEstimate
    flags: tuple[str, ...]


def fused_to_wire(s: FusedSample) -> str:
    """Canonical JSON text for one fused sample; key order and float
    formatting are fixed so equal samples serialize to equal bytes."""
    rel = s.pose.rel_angle_rad
    return json.dumps({
        "type": "fused",
        "t": s.t,
        "axial_n": s.axial_n,
        "rel_angle_deg": None if rel is None else math.degrees(rel),
        "quality": s.pose.quality,
        "force_n": list(s.force_n),
        "flags": list(s.flags),
    }, separators=(",", ":"))


class StopFlagTracker:
    """Causal hysteresis on the axial channel: asserted from the upward
    threshold crossing until the force falls below the close level."""

    def __init__(self, threshold_n: float = DEFAULT_STOP_THRESHOLD_N,
                 hysteresis_n: float = DEFAULT_STOP_HYSTERESIS_N):
        self.threshold_n = threshold_n
        self.close_n = threshold_n - hysteresis_n
        self.active = False

    def update(self, axial_n: float) -> bool:
        if self.active:
            if axial_n < self.close_n:
                self.active = False
        elif axial_n > self.threshold_n:
            self.active = True
        return self.active


class TapFlagTracker:
    """Taps are sharp off-axis strikes; flag while the lateral magnitude
    is above threshold.  Depends only on the current sample, so live and
    batch agree by construction."""

    def __init__(self, threshold_n: float = TAP_FLAG_THRESHOLD_N):
        self.threshold_n = threshold_n

    def update(self, sample: ForceSample) -> bool:
        return math.hypot(sample.f[0], sample.f[1]) > self.threshold_n


class FusionCore:
    """Order-driven fusion: feed frames and force samples in time order
    (frames by mapped sensor time), get one FusedSample per force
    sample.  Both replay and live fusion run through this class."""

    def __init__(self, mapping: TimeMapping, cal: Calibration,
                 staleness_s: float = DEFAULT_STALENESS_S):
        self.mapping = mapping
        self.cal = cal
        self.staleness_s = staleness_s
        self._pose = UNAVAILABLE_POSE
        self._pose_t = -math.inf
        self._last_force_t = -math.inf
        self._stop = StopFlagTracker()
        self._tap = TapFlagTracker()

    @property
    def last_force_t(self) -> float:
        return self._last_force_t

    @property
    def last_frame_t(self) -> float:
        return self._pose_t

    def frame_sensor_time(self, frame: KeypointFrame) -> float:
        return float(apply_mapping(frame.t, self.mapping))

    def push_frame(self, frame: KeypointFrame) -> None:
        ts = self.frame_sensor_time(frame)
        if ts < self._pose_t:
            raise DataError("keypoint frames pushed out of order")
        self._pose = relative_angle(frame, self.cal)
        self._pose_t = ts

    def push_force(self, sample: ForceSample) -> FusedSample:
        if sample.t < self._last_force_t:
            raise DataError("force samples pushed out of order")
        self._last_force_t = sample.t
        axial = axial_force(sample, self.cal)
        stale = (sample.t - self._pose_t) > self.staleness_s
        pose = UNAVAILABLE_POSE if stale else self._pose
        flagged = {
            "stale": stale,
            "overload": sample.overload,
            "tap": self._tap.update(sample),
            "stop": self._stop.update(axial),
        }
        flags = tuple(name for name in FLAG_ORDER if flagged[name])
        return FusedSample(t=sample.t, force_n=sample.f, torque_nm=sample.m,
                           axial_n=axial, pose=pose, flags=flags)


def fuse_session(force_stream: Iterable[ForceSample],
                 keypoint_stream: Iterable[KeypointFrame],
                 mapping: TimeMapping, cal: Calibration,
                 staleness_s: float = DEFAULT_STALENESS_S) -> Iterator[FusedSample]:
    """Batch fusion: merge the two streams in sensor-clock order and run
    them through FusionCore.  A frame whose mapped time equals a force
    sample's time is applied before that sample."""
    core = FusionCore(mapping, cal, staleness_s)
    frames = deque(keypoint_stream)
    for sample in force_stream:
        while frames and core.frame_sensor_time(frames[0]) <= sample.t:
            core.push_frame(frames.popleft())
        yield core.push_force(sample)


def pace(fused: Iterable[FusedSample], speed: float,
         sleep: Callable[[float], None] = time.sleep) -> Iterator[FusedSample]:
    """Yield fused samples with original inter-sample delays divided by
    ``speed``; speed 0 streams as fast as possible."""
    if speed < 0:
        raise ValidationError("replay speed must be >= 0")
    prev_t: float | None = None
    for sample in fused:
        if speed > 0 and prev_t is not None and sample.t > prev_t:
            sleep((sample.t - prev_t) / speed)
        prev_t = sample.t
        yield sample


@dataclass(frozen=True)
class SessionRecord:
    id: str
    created: str
    force_path: str
    keypoint_path: str
    tap_paths: dict[str, str]
    calibration_path: str
    mapping: TimeMapping | None = None
    analysis: dict | None = None
    partial: bool = False

    def to_wire(self) -> dict:
        return {
            "id": self.id,
            "created": self.created,
            "force_path": self.force_path,
            "keypoint_path": self.keypoint_path,
            "tap_paths": dict(self.tap_paths),
            "calibration_path": self.calibration_path,
            "mapping": None if self.mapping is None else self.mapping.to_wire(),
            "analysis": self.analysis,
            "partial": self.partial,
        }

    @classmethod
    def from_wire(cls, d: dict) -> "SessionRecord":
        mapping = d.get("mapping")
        return cls(
            id=str(d["id"]),
            created=str(d.get("created", "")),
            force_path=str(d["force_path"]),
            keypoint_path=str(d["keypoint_path"]),
            tap_paths={str(k): str(v)
                       for k, v in (d.get("tap_paths") or {}).items()},
            calibration_path=str(d["calibration_path"]),
            mapping=None if mapping is None else TimeMapping.from_wire(mapping),
            analysis=d.get("analysis"),
            partial=bool(d.get("partial", False)),
        )


def analysis_to_wire(gait: GaitReport | None,
                     stops: list[StopEvent]) -> dict:
    return {"gait": None if gait is None else gait.to_wire(),
            "stops": [e.to_wire() for e in stops]}


def load_session(session_dir: str | Path) -> SessionRecord:
    """Read and validate a session manifest; referenced files must exist."""
    session_dir = Path(session_dir)
    path = session_dir / SESSION_FILE
    if not path.exists():
        raise DataError(f"{session_dir} has no {SESSION_FILE}")
    try:
        record = SessionRecord.from_wire(json.loads(path.read_text()))
    except (KeyError, TypeError, json.JSONDecodeError) as e:
        raise DataError(f"{path}: bad session manifest: {e}") from e
    missing = [p for p in (record.force_path, record.keypoint_path,
                           record.calibration_path,
                           *record.tap_paths.values())
               if not (session_dir / p).exists()]
    if missing:
        raise DataError(f"{session_dir}: missing session files: {missing}")
    return record


def save_session(record: SessionRecord, session_dir: str | Path) -> Path:
    path = Path(session_dir) / SESSION_FILE
    with open(path, "w") as fh:
        json.dump(record.to_wire(), fh, indent=2)
        fh.write("\n")
    return path


def require_mapping(record: SessionRecord) -> TimeMapping:
    if record.mapping is None:
        raise NotSyncedError(
            f"session {record.id} has no clock mapping; run `sync` first")
    return record.mapping


class SessionRecorder:
    """Verbatim raw-stream recorder.  The manifest is written with
    partial=True the moment recording starts, and rewritten with
    partial=False only on a clean close, so an interrupted recording is
    visibly incomplete but still replayable up to the cut."""

    def __init__(self, session_dir: str | Path, session_id: str,
                 calibration_wire: dict | None = None):
        self.dir = Path(session_dir)
        try:
            self.dir.mkdir(parents=True, exist_ok=True)
        except OSError as e:
            raise RecordingError(f"cannot create {session_dir}: {e}") from e
        self.force_stats = StreamStats()
        self.keypoint_stats = StreamStats()
        created = time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime())
        cal_path = self.dir / "calibration.json"
        if calibration_wire is not None or not cal_path.exists():
            from .geometry import default_calibration
            wire = calibration_wire or default_calibration().to_wire()
            cal_path.write_text(json.dumps(wire, indent=2) + "\n")
        self.record = SessionRecord(
            id=session_id, created=created,
            force_path="force.jsonl", keypoint_path="keypoints.jsonl",
            tap_paths={}, calibration_path="calibration.json", partial=True)
        save_session(self.record, self.dir)
        try:
            self._force_fh = open(self.dir / "force.jsonl", "wb")
            self._kp_fh = open(self.dir / "keypoints.jsonl", "wb")
        except OSError as e:
            raise RecordingError(f"cannot open stream files: {e}") from e
        self._closed = False

    def write_force_raw(self, raw: bytes, t: float | None = None,
                        ok: bool = True) -> None:
        self._write(self._force_fh, raw)
        self.force_stats.saw(t)
        if not ok:
            self.force_stats.dropped()

    def write_keypoint_raw(self, raw: bytes, t: float | None = None,
                           ok: bool = True) -> None:
        self._write(self._kp_fh, raw)
        self.keypoint_stats.saw(t)
        if not ok:
            self.keypoint_stats.dropped()

    def _write(self, fh, raw: bytes) -> None:
        if self._closed:
            raise RecordingError("recorder is closed")
        try:
            fh.write(raw.rstrip(b"\n") + b"\n")
        except OSError as e:
            raise RecordingError(f"write failed: {e}") from e

    def close(self, mapping: TimeMapping | None = None) -> SessionRecord:
        if self._closed:
            return self.record
        self._closed = True
        self._force_fh.close()
        self._kp_fh.close()
        self.record = replace(self.record, partial=False, mapping=mapping)
        save_session(self.record, self.dir)
        return self.record
