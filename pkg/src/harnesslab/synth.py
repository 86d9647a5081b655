"""Deterministic synthetic sessions with known ground truth.

A session is a quiet tap phase followed by walking.  The axial (z)
channel carries the gait sine and the stop pulses; the three calibration
taps go on the lateral (x) channel so they read as magnitude spikes
without polluting the axial analytics.  Stop pulses are blended in as a
crossfade, axial = gait*(1-g) + peak*g with a Gaussian g, so the signal
peaks at exactly the configured stop level instead of stacking on top of
whatever the gait phase contributes.  Stop times are snapped to the
nearest gait crest, which keeps the blend above the detector's close
level throughout the pulse: one stop, one event.

The dog is a rigid parametric layout on the ground plane (tail fixed,
head 0.9 m ahead along the yaw track, legs 0.12 m beside the tail,
handle bar at a fixed yaw), forward-projected through the projection
module into the session's view.  The camera clock runs behind the
sensor clock by clock_offset_s.

Everything is drawn from one seeded generator in a fixed order, so a
given spec reproduces byte-identical files.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import NamedTuple

import numpy as np

from .errors import ConfigError, ValidationError
from .geometry import default_calibration, save_calibration
from .ingest import (
    KEYPOINT_NAMES,
    ForceSample,
    Keypoint,
    KeypointFrame,
    serialize_force_record,
    serialize_keypoint_record,
)
from .projection import ViewConfig, ground_to_ray, ray_to_persp_pixel
from .timesync import TapEvent, save_tap_events

WALK_START_S = 5.0  # taps own the quiet first seconds
WALK_RAMP_S = 1.0
TAP_TIMES_S = (1.0, 2.3, 3.9)  # non-commensurate with gait crests
TAP_PEAK_N = 20.0
TAP_WIDTH_S = 0.08
STOP_WIDTH_S = 0.3
CAMERA_HEIGHT_M = 1.5
HANDLE_YAW_RAD = 0.0
TAIL_XZ = (0.0, 1.1)
HEAD_AHEAD_M = 0.9
LEG_SIDE_M = 0.12
GRIP_XZ = (0.18, 0.75)
HANDLE_BAR_M = 0.42
DEFAULT_VIEW = ViewConfig.from_degrees(0.0, -45.0, 100.0)


@dataclass(frozen=True)
class SynthSpec:
    duration_s: float = 60.0
    force_rate_hz: float = 100.0
    video_rate_hz: float = 30.0
    cadence_hz: float = 1.0
    gait_amp_n: float = 20.0
    stop_times_s: tuple[float, ...] = ()
    stop_peak_n: float = 32.0
    clock_offset_s: float = 0.0
    dog_yaw_track: tuple[tuple[float, float], ...] = ((0.0, 0.0),)  # (t, rad)
    keypoint_noise_px: float = 0.0
    force_noise_n: float = 0.2
    tap_jitter_s: float = 0.0
    tail_drop_prob: float = 0.145
    seed: int = 0

    def __post_init__(self):
        if self.duration_s <= 0:
            raise ConfigError("duration_s must be positive")
        if self.force_rate_hz <= 0 or self.video_rate_hz <= 0:
            raise ConfigError("sample rates must be positive")
        if self.cadence_hz <= 0:
            raise ConfigError("cadence_hz must be positive")
        if self.gait_amp_n < 0 or self.stop_peak_n < 0:
            raise ConfigError("amplitudes must be >= 0")
        for t0 in self.stop_times_s:
            if not WALK_START_S < t0 < self.duration_s - 1.0:
                raise ValidationError(
                    f"stop at {t0} s outside the walking span of the session")
        if not 0.0 <= self.tail_drop_prob <= 1.0:
            raise ConfigError("tail_drop_prob must be in [0, 1]")
        if self.keypoint_noise_px < 0 or self.force_noise_n < 0 \
                or self.tap_jitter_s < 0:
            raise ConfigError("noise levels must be >= 0")
        if abs(self.clock_offset_s) > 9.0:
            raise ConfigError("clock_offset_s beyond the sync search range")


class SynthPaths(NamedTuple):
    session_dir: Path
    force: Path
    keypoints: Path
    keypoints_gt: Path
    taps_camera: Path
    calibration: Path
    ground_truth: Path
    session: Path


def _yaw_at(spec: SynthSpec, t_sen: np.ndarray) -> np.ndarray:
    track = np.asarray(spec.dog_yaw_track, dtype=np.float64).reshape(-1, 2)
    return np.interp(t_sen, track[:, 0], track[:, 1])


def _walk_ramp(t: np.ndarray) -> np.ndarray:
    return np.clip((t - WALK_START_S) / WALK_RAMP_S, 0.0, 1.0)


def _snap_to_crest(t0: float, cadence: float) -> float:
    """Nearest time where the gait sine is at +1."""
    k = round(t0 * cadence - 0.25)
    t = (k + 0.25) / cadence
    earliest = WALK_START_S + WALK_RAMP_S
    while t < earliest:
        k += 1
        t = (k + 0.25) / cadence
    return t


def effective_stop_times(spec: SynthSpec) -> list[float]:
    if spec.gait_amp_n == 0:
        return list(spec.stop_times_s)
    return [_snap_to_crest(t0, spec.cadence_hz) for t0 in spec.stop_times_s]


def axial_waveform(spec: SynthSpec, t: np.ndarray) -> np.ndarray:
    """Noise-free axial channel on the sensor clock."""
    gait = spec.gait_amp_n * np.sin(2 * np.pi * spec.cadence_hz * t) \
        * _walk_ramp(t)
    sigma = STOP_WIDTH_S / 2.355  # fwhm
    g = np.zeros_like(t)
    for t0 in effective_stop_times(spec):
        g += np.exp(-0.5 * ((t - t0) / sigma) ** 2)
    g = np.clip(g, 0.0, 1.0)
    return gait * (1.0 - g) + spec.stop_peak_n * g


def tap_waveform(t: np.ndarray) -> np.ndarray:
    """Lateral tap spikes: raised-cosine bumps, zero outside."""
    x = np.zeros_like(t)
    for tc in TAP_TIMES_S:
        sel = np.abs(t - tc) < TAP_WIDTH_S / 2
        x[sel] += TAP_PEAK_N * np.cos(np.pi * (t[sel] - tc) / TAP_WIDTH_S) ** 2
    return x


def _dog_ground_points(yaw: float) -> dict[str, tuple[float, float]]:
    tx, tz = TAIL_XZ
    head = (tx + HEAD_AHEAD_M * math.sin(yaw), tz + HEAD_AHEAD_M * math.cos(yaw))
    left = (tx - LEG_SIDE_M * math.cos(yaw), tz + LEG_SIDE_M * math.sin(yaw))
    right = (tx + LEG_SIDE_M * math.cos(yaw), tz - LEG_SIDE_M * math.sin(yaw))
    tip = (GRIP_XZ[0] + HANDLE_BAR_M * math.sin(HANDLE_YAW_RAD),
           GRIP_XZ[1] + HANDLE_BAR_M * math.cos(HANDLE_YAW_RAD))
    return {"head": head, "tail": (tx, tz), "left_leg": left,
            "right_leg": right, "handle": tip, "grip": GRIP_XZ}


def _project(points: dict, view: ViewConfig) -> dict[str, tuple[float, float]]:
    out = {}
    for name, (x, z) in points.items():
        uv = ray_to_persp_pixel(ground_to_ray(x, z, CAMERA_HEIGHT_M), view)
        if uv is None or not (0 <= uv[0] <= view.size_px
                              and 0 <= uv[1] <= view.size_px):
            raise ValidationError(
                f"synthetic {name} does not project into the view; "
                "yaw track leaves the camera's field")
        out[name] = uv
    return out


def generate(spec: SynthSpec, out_dir: str | Path,
             view: ViewConfig = DEFAULT_VIEW) -> SynthPaths:
    """Write a complete synthetic session directory."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(spec.seed)

    # force stream, sensor clock
    n = int(round(spec.duration_s * spec.force_rate_hz))
    t_sen = np.arange(n, dtype=np.float64) / spec.force_rate_hz
    axial = axial_waveform(spec, t_sen)
    lateral = tap_waveform(t_sen)
    f_noise = rng.normal(0.0, spec.force_noise_n, (n, 3)) \
        if spec.force_noise_n > 0 else np.zeros((n, 3))
    m_noise = rng.normal(0.0, 0.01, (n, 3)) if spec.force_noise_n > 0 \
        else np.zeros((n, 3))
    fx = lateral + f_noise[:, 0]
    fy = f_noise[:, 1]
    fz = axial + f_noise[:, 2]

    force_path = out / "force.jsonl"
    with open(force_path, "w") as fh:
        for i in range(n):
            fh.write(serialize_force_record(ForceSample(
                t=float(t_sen[i]), f=(float(fx[i]), float(fy[i]), float(fz[i])),
                m=tuple(float(v) for v in m_noise[i]))) + "\n")

    # keypoint stream, camera clock = sensor - offset
    dt_v = 1.0 / spec.video_rate_hz
    k = np.arange(int(math.floor(spec.duration_s * spec.video_rate_hz)))
    t_cam = k * dt_v
    t_map = t_cam + spec.clock_offset_s  # sensor-clock frame times
    keep = (t_map >= 0.0) & (t_map <= spec.duration_s)
    t_cam, t_map = t_cam[keep], t_map[keep]
    yaw_sen = _yaw_at(spec, t_map)

    kp_path = out / "keypoints.jsonl"
    gt_path = out / "keypoints_gt.jsonl"
    with open(kp_path, "w") as fh, open(gt_path, "w") as gh:
        for tc, yaw in zip(t_cam, yaw_sen):
            pixels = _project(_dog_ground_points(float(yaw)), view)
            gt_kp = {name: Keypoint(u, v, 1.0)
                     for name, (u, v) in pixels.items()}
            noisy: dict[str, Keypoint | None] = {}
            for name in KEYPOINT_NAMES:
                u, v = pixels[name]
                if spec.keypoint_noise_px > 0:
                    u += rng.normal(0.0, spec.keypoint_noise_px)
                    v += rng.normal(0.0, spec.keypoint_noise_px)
                    u = float(np.clip(u, 0.0, view.size_px))
                    v = float(np.clip(v, 0.0, view.size_px))
                conf = float(rng.uniform(0.8, 1.0))
                noisy[name] = Keypoint(u, v, conf)
            if rng.random() < spec.tail_drop_prob:
                noisy["tail"] = None
            gh.write(serialize_keypoint_record(KeypointFrame(
                t=float(tc), view=view, kp=gt_kp)) + "\n")
            fh.write(serialize_keypoint_record(KeypointFrame(
                t=float(tc), view=view, kp=noisy)) + "\n")

    # camera-side tap observations
    cam_taps = []
    for tc in TAP_TIMES_S:
        jitter = float(rng.uniform(-spec.tap_jitter_s, spec.tap_jitter_s)) \
            if spec.tap_jitter_s > 0 else 0.0
        cam_taps.append(TapEvent(t=tc - spec.clock_offset_s + jitter,
                                 mag=TAP_PEAK_N))
    taps_path = out / "taps_camera.json"
    save_tap_events(cam_taps, taps_path)

    cal_path = out / "calibration.json"
    save_calibration(default_calibration(camera_height_m=CAMERA_HEIGHT_M),
                     cal_path)

    truth = {
        "clock_offset_s": spec.clock_offset_s,
        "cadence_hz": spec.cadence_hz,
        "gait_amp_n": spec.gait_amp_n,
        "stop_times_s": effective_stop_times(spec),
        "stop_peak_n": spec.stop_peak_n,
        "tap_times_s": list(TAP_TIMES_S),
        "yaw_track": [[float(t), math.degrees(float(y))]
                      for t, y in np.asarray(spec.dog_yaw_track,
                                             dtype=np.float64).reshape(-1, 2)],
        "handle_yaw_deg": math.degrees(HANDLE_YAW_RAD),
        "walk_start_s": WALK_START_S,
        "duration_s": spec.duration_s,
        "force_rate_hz": spec.force_rate_hz,
        "video_rate_hz": spec.video_rate_hz,
        "keypoint_noise_px": spec.keypoint_noise_px,
        "tail_drop_prob": spec.tail_drop_prob,
        "seed": spec.seed,
    }
    truth_path = out / "ground_truth.json"
    with open(truth_path, "w") as fh:
        json.dump(truth, fh, indent=2)
        fh.write("\n")

    session = {
        "id": f"synth-{spec.seed}",
        "created": "1970-01-01T00:00:00Z",
        "force_path": "force.jsonl",
        "keypoint_path": "keypoints.jsonl",
        "tap_paths": {"camera": "taps_camera.json"},
        "calibration_path": "calibration.json",
        "mapping": None,
        "analysis": None,
    }
    session_path = out / "session.json"
    with open(session_path, "w") as fh:
        json.dump(session, fh, indent=2)
        fh.write("\n")

    return SynthPaths(session_dir=out, force=force_path, keypoints=kp_path,
                      keypoints_gt=gt_path, taps_camera=taps_path,
                      calibration=cal_path, ground_truth=truth_path,
                      session=session_path)
