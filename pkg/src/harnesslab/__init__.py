"""harnesslab: fuse a 6-axis handle force stream with 360-camera keypoint
detections into axial force, handle-to-dog relative angle, and session
analytics, with deterministic recording, replay, and live telemetry."""

from .projection import (
    EquirectDims,
    GroundPoint,
    ViewConfig,
    equirect_pixel_to_ray,
    ground_to_ray,
    persp_pixel_to_ray,
    ray_to_equirect_pixel,
    ray_to_ground,
    ray_to_persp_pixel,
)

__version__ = "0.1.0"

__all__ = [
    "EquirectDims",
    "GroundPoint",
    "ViewConfig",
    "equirect_pixel_to_ray",
    "ground_to_ray",
    "persp_pixel_to_ray",
    "ray_to_equirect_pixel",
    "ray_to_ground",
    "ray_to_persp_pixel",
    "__version__",
]
