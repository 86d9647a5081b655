"""Exact geometry between equirectangular panoramas, virtual perspective
views, unit rays, and ground-plane positions.

COORDINATE CONVENTIONS
======================
Camera frame (right-handed):
  - x: right
  - y: up
  - z: forward
  The camera frame is assumed gravity-leveled with zero roll (shoulder
  mount).  A configurable pitch offset for imperfect mounting is applied
  by callers via ``pitch_rotation``.

Equirectangular image (full sphere, width = 2 * height):
  - u: column, 0 <= u < width, linear in yaw
  - v: row, 0 <= v < height, linear in pitch
  - u = width/2 maps to yaw 0 (forward); u increasing turns right
  - v = height/2 maps to pitch 0 (horizon); v = 0 is the zenith
  - continuous pixel coordinates, image center at (W/2, H/2), no
    half-pixel offset

Perspective view (square pinhole image cut from the sphere):
  - u right, v down, 0 <= u, v < size_px
  - center pixel maps to the view direction (yaw, pitch)

Ground frame (camera-leveled, origin on the ground under the camera):
  - x: right, z: forward, both meters

Angles:
  yaw = atan2(x, z)   (0 forward, positive right)
  pitch = asin(y)     (positive up)

All ray-valued functions accept and return numpy arrays: a single ray is
shape (3,), a batch is (N, 3).  Pixel arguments broadcast: scalars give
scalar results, (N,) arrays give (N,) or (N, 2) results.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .errors import ConfigError, DomainError

GRAZING_EPS = 1e-6  # rays steeper than this (in -y) intersect the ground
UNIT_TOL = 1e-6


@dataclass(frozen=True)
class EquirectDims:
    """Size of a full-sphere equirectangular image."""

    width_px: int
    height_px: int

    def __post_init__(self):
        if self.width_px <= 0 or self.height_px <= 0:
            raise ConfigError("equirect dimensions must be positive")
        if self.width_px != 2 * self.height_px:
            raise ConfigError(
                f"full-sphere equirect requires width = 2*height, "
                f"got {self.width_px}x{self.height_px}"
            )


@dataclass(frozen=True)
class ViewConfig:
    """A virtual perspective view cut from the sphere (square image)."""

    yaw_rad: float
    pitch_rad: float
    hfov_rad: float
    size_px: int = 416

    def __post_init__(self):
        if not -math.pi < self.yaw_rad <= math.pi:
            raise ConfigError(f"view yaw {self.yaw_rad} outside (-pi, pi]")
        if not -math.pi / 2 <= self.pitch_rad <= math.pi / 2:
            raise ConfigError(f"view pitch {self.pitch_rad} outside [-pi/2, pi/2]")
        if not 0.0 < self.hfov_rad < math.pi:
            raise ConfigError(f"view hfov {self.hfov_rad} outside (0, pi)")
        if self.size_px <= 0:
            raise ConfigError("view size_px must be positive")

    @classmethod
    def from_degrees(cls, yaw_deg: float, pitch_deg: float, hfov_deg: float,
                     size_px: int = 416) -> "ViewConfig":
        return cls(math.radians(yaw_deg), math.radians(pitch_deg),
                   math.radians(hfov_deg), size_px)

    @classmethod
    def from_wire(cls, d: dict) -> "ViewConfig":
        return cls.from_degrees(d["yaw_deg"], d["pitch_deg"], d["hfov_deg"],
                                int(d.get("size_px", 416)))

    def to_wire(self) -> dict:
        return {
            "yaw_deg": math.degrees(self.yaw_rad),
            "pitch_deg": math.degrees(self.pitch_rad),
            "hfov_deg": math.degrees(self.hfov_rad),
            "size_px": self.size_px,
        }


class GroundPoint(NamedTuple):
    """Ground-plane position in the camera-leveled frame (meters)."""

    x_m: float
    z_m: float


def unit(v: np.ndarray) -> np.ndarray:
    """Normalize vectors along the last axis; zero-length input raises."""
    v = np.asarray(v, dtype=np.float64)
    n = np.linalg.norm(v, axis=-1, keepdims=True)
    if np.any(n < 1e-12):
        raise DomainError("zero-length ray")
    return v / n


def yaw_rotation(yaw_rad: float) -> np.ndarray:
    """Rotation about +y; positive yaw turns the forward axis to the right."""
    c, s = math.cos(yaw_rad), math.sin(yaw_rad)
    return np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])


def pitch_rotation(pitch_rad: float) -> np.ndarray:
    """Rotation about +x; positive pitch tilts the forward axis up."""
    c, s = math.cos(pitch_rad), math.sin(pitch_rad)
    return np.array([[1.0, 0.0, 0.0], [0.0, c, s], [0.0, -s, c]])


def view_rotation(view: ViewConfig) -> np.ndarray:
    """Local-to-camera rotation for a view: pitch first, then yaw."""
    return yaw_rotation(view.yaw_rad) @ pitch_rotation(view.pitch_rad)


def equirect_pixel_to_ray(u, v, dims: EquirectDims) -> np.ndarray:
    """Map continuous equirect pixel coordinates to unit rays.

    yaw = 2*pi*(u/W - 0.5), pitch = pi*(0.5 - v/H),
    ray = (cos(pitch)*sin(yaw), sin(pitch), cos(pitch)*cos(yaw)).
    """
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    if np.any(u < 0) or np.any(u >= dims.width_px) \
            or np.any(v < 0) or np.any(v >= dims.height_px):
        raise DomainError("equirect pixel outside image bounds")
    yaw = 2.0 * np.pi * (u / dims.width_px - 0.5)
    pitch = np.pi * (0.5 - v / dims.height_px)
    cp = np.cos(pitch)
    ray = np.stack([cp * np.sin(yaw), np.sin(pitch), cp * np.cos(yaw)], axis=-1)
    return ray


def ray_to_equirect_pixel(ray, dims: EquirectDims):
    """Inverse of :func:`equirect_pixel_to_ray`; u wrapped into [0, W).

    At the poles (|dy| = 1) the yaw is undefined; v is exactly 0 or H and
    u falls back to W/2.  Callers must not rely on the pole u.
    """
    r = unit(ray)
    dx, dy, dz = r[..., 0], r[..., 1], r[..., 2]
    pitch = np.arcsin(np.clip(dy, -1.0, 1.0))
    yaw = np.arctan2(dx, dz)
    u = (yaw / (2.0 * np.pi) + 0.5) * dims.width_px
    u = np.mod(u, dims.width_px)
    v = (0.5 - pitch / np.pi) * dims.height_px
    if u.ndim == 0:
        return float(u), float(v)
    return u, v


def persp_pixel_to_ray(u, v, view: ViewConfig) -> np.ndarray:
    """Map perspective-view pixels to unit rays in the camera frame.

    Pinhole model: xn = (u - S/2)/(S/2) * tan(hfov/2), yn the same with a
    sign flip (v grows downward), then the local ray (xn, yn, 1) is
    normalized and rotated into the view direction.

    Coordinates span the closed interval [0, S]: u = S is the right image
    edge, exactly half the fov away from the view axis.
    """
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    s = view.size_px
    if np.any(u < 0) or np.any(u > s) or np.any(v < 0) or np.any(v > s):
        raise DomainError("perspective pixel outside image bounds")
    half = math.tan(view.hfov_rad / 2.0)
    xn = (u - s / 2.0) / (s / 2.0) * half
    yn = -(v - s / 2.0) / (s / 2.0) * half
    local = np.stack([xn, yn, np.ones_like(xn)], axis=-1)
    local = local / np.linalg.norm(local, axis=-1, keepdims=True)
    return local @ view_rotation(view).T


def ray_to_persp_pixel(ray, view: ViewConfig):
    """Project rays into a perspective view.

    Single rays return an (u, v) tuple, or None when the ray points behind
    the view plane (a signaled outcome, not an error).  Batches return an
    (N, 2) array with NaN rows for behind-view rays.  In-front rays that
    fall outside the image bounds still return their coordinates.
    """
    r = unit(ray)
    local = r @ view_rotation(view)  # R.T applied to rows
    z = local[..., 2]
    half = math.tan(view.hfov_rad / 2.0)
    s = view.size_px
    with np.errstate(divide="ignore", invalid="ignore"):
        xn = local[..., 0] / z
        yn = local[..., 1] / z
        u = (xn / half + 1.0) * (s / 2.0)
        v = (1.0 - yn / half) * (s / 2.0)
    front = z > 0
    if r.ndim == 1:
        if not front:
            return None
        return float(u), float(v)
    out = np.stack([u, v], axis=-1)
    out[~front] = np.nan
    return out


def ray_to_ground(ray, camera_height_m: float):
    """Intersect rays from a camera at the given height with the ground.

    Single rays return a GroundPoint, or None when the ray points at or
    above the horizon (grazing threshold 1e-6).  Batches return (N, 2)
    with NaN rows for non-intersecting rays.  Rays must be unit length.
    """
    if camera_height_m <= 0:
        raise DomainError("camera height must be positive")
    r = np.asarray(ray, dtype=np.float64)
    n = np.linalg.norm(r, axis=-1)
    if np.any(np.abs(n - 1.0) > UNIT_TOL):
        raise DomainError("ray_to_ground requires unit rays")
    dy = r[..., 1]
    down = dy < -GRAZING_EPS
    with np.errstate(divide="ignore", invalid="ignore"):
        t = camera_height_m / -dy
        x = t * r[..., 0]
        z = t * r[..., 2]
    if r.ndim == 1:
        if not down:
            return None
        return GroundPoint(float(x), float(z))
    out = np.stack([x, z], axis=-1)
    out[~down] = np.nan
    return out


def ground_to_ray(x_m, z_m, camera_height_m: float) -> np.ndarray:
    """Unit ray from a camera at the given height toward a ground point."""
    if camera_height_m <= 0:
        raise DomainError("camera height must be positive")
    x = np.asarray(x_m, dtype=np.float64)
    z = np.asarray(z_m, dtype=np.float64)
    v = np.stack([x, np.full_like(x, -camera_height_m), z], axis=-1)
    return unit(v)
