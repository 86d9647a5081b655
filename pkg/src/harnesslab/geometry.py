"""Axial handle force and handle-to-dog relative angle.

Force path: rotate the sensor-frame force vector into the handle frame
with a per-handle mounting rotation, read the component along the handle
axis (z), apply the configured sign.  Positive = push toward the dog.

Angle path: keypoint pixels -> rays (through the frame's view, with the
calibration pitch offset applied) -> ground-plane points -> yaw angles.
All angles are ground-plane bearings: atan2(x, z), radians, zero straight
ahead, positive to the right.  The relative angle is wrap(dog - handle)
in (-pi, pi].
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ValidationError
from .ingest import ForceSample, KeypointFrame
from .projection import GroundPoint, ViewConfig, persp_pixel_to_ray, ray_to_ground

QUALITY_FULL = "full"
QUALITY_DEGRADED = "degraded"
QUALITY_UNAVAILABLE = "unavailable"

ORTHONORMAL_TOL = 1e-9
MIN_BASELINE_M = 1e-6  # ground separation below this is directionless


def wrap_angle(a: float) -> float:
    """Wrap to (-pi, pi]; the +pi boundary is kept, -pi maps to +pi."""
    return math.pi - (math.pi - a) % (2.0 * math.pi)


@dataclass(frozen=True)
class Calibration:
    sensor_to_handle: np.ndarray  # 3x3, sensor frame -> handle frame
    handle_axis_sign: int = 1
    camera_height_m: float = 1.5
    camera_pitch_offset_rad: float = 0.0

    def __post_init__(self):
        R = np.asarray(self.sensor_to_handle, dtype=np.float64)
        if R.shape != (3, 3):
            raise ValidationError("sensor_to_handle must be 3x3")
        if np.abs(R.T @ R - np.eye(3)).max() > ORTHONORMAL_TOL:
            raise ValidationError("sensor_to_handle is not orthonormal")
        if abs(np.linalg.det(R) - 1.0) > 1e-6:
            raise ValidationError("sensor_to_handle must be a proper rotation")
        object.__setattr__(self, "sensor_to_handle", R)
        if self.handle_axis_sign not in (1, -1):
            raise ValidationError("handle_axis_sign must be +1 or -1")
        if not self.camera_height_m > 0:
            raise ValidationError("camera_height_m must be positive")

    def to_wire(self) -> dict:
        return {
            "sensor_to_handle": self.sensor_to_handle.tolist(),
            "handle_axis_sign": self.handle_axis_sign,
            "camera_height_m": self.camera_height_m,
            "camera_pitch_offset_deg": math.degrees(self.camera_pitch_offset_rad),
        }

    @classmethod
    def from_wire(cls, d: dict) -> "Calibration":
        return cls(
            sensor_to_handle=np.asarray(d["sensor_to_handle"], dtype=np.float64),
            handle_axis_sign=int(d.get("handle_axis_sign", 1)),
            camera_height_m=float(d.get("camera_height_m", 1.5)),
            camera_pitch_offset_rad=math.radians(
                float(d.get("camera_pitch_offset_deg", 0.0))),
        )


def default_calibration(camera_height_m: float = 1.5) -> Calibration:
    """Identity mounting: handle axis is the sensor z axis."""
    return Calibration(sensor_to_handle=np.eye(3),
                       camera_height_m=camera_height_m)


def load_calibration(path: str | Path) -> Calibration:
    with open(path) as fh:
        return Calibration.from_wire(json.load(fh))


def save_calibration(cal: Calibration, path: str | Path) -> None:
    with open(path, "w") as fh:
        json.dump(cal.to_wire(), fh, indent=2)
        fh.write("\n")


@dataclass(frozen=True)
class PoseEstimate:
    dog_yaw_rad: float | None
    handle_yaw_rad: float | None
    rel_angle_rad: float | None
    quality: str

    def __post_init__(self):
        if self.quality == QUALITY_UNAVAILABLE:
            if not (self.dog_yaw_rad is None and self.handle_yaw_rad is None
                    and self.rel_angle_rad is None):
                raise ValidationError("unavailable pose must carry no angles")
        elif self.quality in (QUALITY_FULL, QUALITY_DEGRADED):
            if self.rel_angle_rad is None:
                raise ValidationError(f"{self.quality} pose needs angles")
            if not -math.pi < self.rel_angle_rad <= math.pi:
                raise ValidationError("rel_angle_rad outside (-pi, pi]")
        else:
            raise ValidationError(f"unknown quality {self.quality!r}")


UNAVAILABLE_POSE = PoseEstimate(None, None, None, QUALITY_UNAVAILABLE)


def axial_force(sample: ForceSample, cal: Calibration) -> float:
    """Signed axial newtons on the handle; overload handling is the
    caller's concern (the flag rides along on the sample)."""
    f_handle = cal.sensor_to_handle @ np.asarray(sample.f, dtype=np.float64)
    return float(cal.handle_axis_sign * f_handle[2])


def axial_series(samples, cal: Calibration) -> tuple[np.ndarray, np.ndarray]:
    """(t, axial_n) arrays for a whole force stream at once."""
    if not samples:
        return np.empty(0), np.empty(0)
    t = np.array([s.t for s in samples], dtype=np.float64)
    F = np.array([s.f for s in samples], dtype=np.float64)
    ax = cal.handle_axis_sign * (F @ cal.sensor_to_handle.T)[:, 2]
    return t, ax


def _effective_view(frame: KeypointFrame, cal: Calibration) -> ViewConfig:
    if cal.camera_pitch_offset_rad == 0.0:
        return frame.view
    return ViewConfig(yaw_rad=frame.view.yaw_rad,
                      pitch_rad=frame.view.pitch_rad + cal.camera_pitch_offset_rad,
                      hfov_rad=frame.view.hfov_rad,
                      size_px=frame.view.size_px)


def keypoint_ground_point(frame: KeypointFrame, name: str,
                          cal: Calibration) -> GroundPoint | None:
    """Ground position of one keypoint, or None when the keypoint is
    missing or its ray does not reach the ground."""
    kp = frame.kp.get(name)
    if kp is None:
        return None
    view = _effective_view(frame, cal)
    ray = persp_pixel_to_ray(kp.u, kp.v, view)
    return ray_to_ground(ray, cal.camera_height_m)


def _bearing(a: GroundPoint, b: GroundPoint) -> float | None:
    """Yaw of the vector b -> a, None when the two points coincide."""
    dx, dz = a.x_m - b.x_m, a.z_m - b.z_m
    if math.hypot(dx, dz) < MIN_BASELINE_M:
        return None
    return math.atan2(dx, dz)


def dog_body_yaw(frame: KeypointFrame,
                 cal: Calibration) -> tuple[float, str] | None:
    """Body-axis bearing from tail to head, with the leg midpoint as the
    rear reference when the tail is missing (quality degrades)."""
    head = keypoint_ground_point(frame, "head", cal)
    if head is None:
        return None
    tail = keypoint_ground_point(frame, "tail", cal)
    quality = QUALITY_FULL
    if tail is None:
        left = keypoint_ground_point(frame, "left_leg", cal)
        right = keypoint_ground_point(frame, "right_leg", cal)
        if left is None or right is None:
            return None
        tail = GroundPoint((left.x_m + right.x_m) / 2,
                           (left.z_m + right.z_m) / 2)
        quality = QUALITY_DEGRADED
    yaw = _bearing(head, tail)
    if yaw is None:
        return None
    return yaw, quality


def handle_yaw(frame: KeypointFrame, cal: Calibration) -> float | None:
    """Bearing of the handle bar, grip end to dog end."""
    tip = keypoint_ground_point(frame, "handle", cal)
    grip = keypoint_ground_point(frame, "grip", cal)
    if tip is None or grip is None:
        return None
    return _bearing(tip, grip)


def relative_angle(frame: KeypointFrame, cal: Calibration) -> PoseEstimate:
    """Handle bearing relative to the dog's body axis.  Quality is the
    weaker of the two constituent estimates."""
    dog = dog_body_yaw(frame, cal)
    handle = handle_yaw(frame, cal)
    if dog is None or handle is None:
        return UNAVAILABLE_POSE
    dog_yaw, quality = dog
    return PoseEstimate(dog_yaw_rad=dog_yaw,
                        handle_yaw_rad=handle,
                        rel_angle_rad=wrap_angle(dog_yaw - handle),
                        quality=quality)
