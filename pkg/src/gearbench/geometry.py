"""Poses and the orthographic top-down camera model.

The camera maps world coordinates (meters, y up) to pixel coordinates
(origin top-left, y down) through an exact affine transform. Projection
truncates to integer pixel indices; deprojection returns the world point at
the pixel center, so a round trip moves a point by at most half a pixel on
each axis.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass


def normalize_angle(yaw: float) -> float:
    """Wrap an angle into [-pi, pi)."""
    wrapped = math.fmod(yaw + math.pi, 2.0 * math.pi)
    if wrapped < 0.0:
        wrapped += 2.0 * math.pi
    return wrapped - math.pi


@dataclass(frozen=True, slots=True)
class Pose:
    """Position in meters plus yaw in radians, normalized to [-pi, pi)."""

    x: float
    y: float
    z: float = 0.0
    yaw: float = 0.0

    def __post_init__(self) -> None:
        if self.z < 0.0:
            raise ValueError(f"pose z must be >= 0, got {self.z}")
        object.__setattr__(self, "yaw", normalize_angle(self.yaw))

    def moved(self, dx: float = 0.0, dy: float = 0.0, dz: float = 0.0, dyaw: float = 0.0) -> Pose:
        return Pose(self.x + dx, self.y + dy, max(0.0, self.z + dz), self.yaw + dyaw)

    def xy_distance(self, other: Pose) -> float:
        return math.hypot(self.x - other.x, self.y - other.y)

    def distance(self, other: Pose) -> float:
        return math.sqrt((self.x - other.x) ** 2 + (self.y - other.y) ** 2 + (self.z - other.z) ** 2)


class View(enum.Enum):
    """Which scene a camera observes."""

    TOP_CURRENT = "top_current"
    TOP_GOAL = "top_goal"
    OBJECT_CLOSEUP = "object_closeup"


@dataclass(frozen=True, slots=True)
class Camera:
    """Orthographic top-down camera.

    ``origin_x``/``origin_y`` is the world point at the outer corner of pixel
    (0, 0); world +y points toward the top of the image.
    """

    view: View
    origin_x: float
    origin_y: float
    meters_per_pixel: float
    width_px: int
    height_px: int
    target_object_id: int | None = None

    def __post_init__(self) -> None:
        if self.meters_per_pixel <= 0.0:
            raise ValueError("meters_per_pixel must be positive")
        if self.width_px <= 0 or self.height_px <= 0:
            raise ValueError("image dimensions must be positive")
        if self.view is View.OBJECT_CLOSEUP and self.target_object_id is None:
            raise ValueError("closeup camera needs a target_object_id")

    def project(self, x: float, y: float) -> tuple[int, int]:
        """World point -> integer pixel indices (may fall outside the image)."""
        u = (x - self.origin_x) / self.meters_per_pixel
        v = (self.origin_y - y) / self.meters_per_pixel
        return int(math.floor(u)), int(math.floor(v))

    def deproject(self, px: int, py: int) -> tuple[float, float]:
        """Pixel indices -> world coordinates of the pixel center."""
        x = self.origin_x + (px + 0.5) * self.meters_per_pixel
        y = self.origin_y - (py + 0.5) * self.meters_per_pixel
        return x, y

    def contains_pixel(self, px: int, py: int) -> bool:
        return 0 <= px < self.width_px and 0 <= py < self.height_px

    def contains_world(self, x: float, y: float) -> bool:
        return self.contains_pixel(*self.project(x, y))
