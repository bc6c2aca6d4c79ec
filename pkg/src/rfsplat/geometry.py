"""Angular and Cartesian coordinate types for the radar sensor frame.

The sensor frame is x-forward, y-left, z-up. Azimuth is measured from +x
towards +y, elevation from the xy-plane towards +z. All angles are radians.
"""

from dataclasses import dataclass

import numpy as np

from .exceptions import InvalidInputError

__all__ = [
    "AngularCoordinate",
    "AngularRange",
    "Point3",
    "cartesian_to_spherical",
    "spherical_to_cartesian",
]


@dataclass(frozen=True)
class AngularCoordinate:
    azimuth: float
    elevation: float

    def __post_init__(self):
        if not (np.isfinite(self.azimuth) and np.isfinite(self.elevation)):
            raise InvalidInputError("angular coordinate must be finite")
        if not -np.pi <= self.azimuth <= np.pi:
            raise InvalidInputError(f"azimuth {self.azimuth} outside [-pi, pi]")
        if not -np.pi / 2 <= self.elevation <= np.pi / 2:
            raise InvalidInputError(f"elevation {self.elevation} outside [-pi/2, pi/2]")

    def as_array(self):
        return np.array([self.azimuth, self.elevation])


@dataclass(frozen=True)
class Point3:
    x: float
    y: float
    z: float

    def __post_init__(self):
        if not np.all(np.isfinite([self.x, self.y, self.z])):
            raise InvalidInputError("point components must be finite")

    def as_array(self):
        return np.array([self.x, self.y, self.z])

    @property
    def norm(self):
        return float(np.linalg.norm(self.as_array()))


@dataclass(frozen=True)
class AngularRange:
    """Axis-aligned rectangle in (azimuth, elevation)."""

    azimuth_min: float
    azimuth_max: float
    elevation_min: float
    elevation_max: float

    def __post_init__(self):
        vals = [self.azimuth_min, self.azimuth_max, self.elevation_min, self.elevation_max]
        if not np.all(np.isfinite(vals)):
            raise InvalidInputError("angular range bounds must be finite")
        if not self.azimuth_min < self.azimuth_max:
            raise InvalidInputError("azimuth_min must be < azimuth_max")
        if not self.elevation_min < self.elevation_max:
            raise InvalidInputError("elevation_min must be < elevation_max")

    @classmethod
    def from_degrees(cls, az_min, az_max, el_min, el_max):
        return cls(*np.deg2rad([az_min, az_max, el_min, el_max]).tolist())

    @classmethod
    def default(cls):
        """The +-90 deg azimuth, +-20 deg elevation span of automotive radar."""
        return cls.from_degrees(-90.0, 90.0, -20.0, 20.0)

    def to_degrees(self):
        return tuple(np.rad2deg(
            [self.azimuth_min, self.azimuth_max, self.elevation_min, self.elevation_max]
        ).tolist())

    @property
    def center(self):
        return np.array([
            0.5 * (self.azimuth_min + self.azimuth_max),
            0.5 * (self.elevation_min + self.elevation_max),
        ])

    def contains(self, X):
        X = np.atleast_2d(np.asarray(X, dtype=float))
        return (
            (X[:, 0] >= self.azimuth_min) & (X[:, 0] <= self.azimuth_max)
            & (X[:, 1] >= self.elevation_min) & (X[:, 1] <= self.elevation_max)
        )


def spherical_to_cartesian(azimuth, elevation, depth):
    """Convert (azimuth, elevation, range) to sensor-frame xyz.

    Accepts scalars or broadcastable arrays and returns an array whose last
    axis holds (x, y, z).

    >>> spherical_to_cartesian(0.0, 0.0, 1.0)
    array([1., 0., 0.])
    """
    az = np.asarray(azimuth, dtype=float)
    el = np.asarray(elevation, dtype=float)
    d = np.asarray(depth, dtype=float)
    if not np.all(np.isfinite(d)) or np.any(d <= 0):
        raise InvalidInputError("depth must be positive and finite")
    if not (np.all(np.isfinite(az)) and np.all(np.isfinite(el))):
        raise InvalidInputError("angles must be finite")
    cos_el = np.cos(el)
    return np.stack(
        np.broadcast_arrays(d * cos_el * np.cos(az), d * cos_el * np.sin(az), d * np.sin(el)),
        axis=-1,
    )


def cartesian_to_spherical(points):
    """Inverse of :func:`spherical_to_cartesian`.

    Returns ``(azimuth, elevation, depth)``. Directions along the z axis
    have undefined azimuth; it is reported as 0.
    """
    p = np.asarray(points, dtype=float)
    if p.shape[-1] != 3:
        raise InvalidInputError("points must have a trailing axis of length 3")
    x, y, z = p[..., 0], p[..., 1], p[..., 2]
    horiz = np.hypot(x, y)
    depth = np.hypot(horiz, z)
    if np.any(depth == 0) or not np.all(np.isfinite(depth)):
        raise InvalidInputError("cannot convert the zero vector")
    azimuth = np.where(horiz == 0, 0.0, np.arctan2(y, x))
    elevation = np.arctan2(z, horiz)
    return azimuth, elevation, depth
