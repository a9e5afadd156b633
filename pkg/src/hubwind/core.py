"""Shared domain types: planar locations, the 10-minute time grid, wind
samples and the square-root transform used by both modelling stages."""

from __future__ import annotations

import math
from dataclasses import dataclass
from datetime import datetime, timedelta, timezone

import numpy as np

TIME_STEP_MINUTES = 10
DEFAULT_ORIGIN = datetime(2000, 1, 1, tzinfo=timezone.utc)


@dataclass(frozen=True)
class GeoLocation:
    """Planar position in km (easting ``x``, northing ``y``)."""

    x: float
    y: float

    def __post_init__(self):
        if not (math.isfinite(self.x) and math.isfinite(self.y)):
            raise ValueError(f"non-finite coordinates ({self.x}, {self.y})")

    @classmethod
    def from_lonlat(cls, lon: float, lat: float, ref_lon: float, ref_lat: float):
        """Equirectangular projection about ``(ref_lon, ref_lat)``."""
        r_earth = 6371.0088
        x = math.radians(lon - ref_lon) * r_earth * math.cos(math.radians(ref_lat))
        y = math.radians(lat - ref_lat) * r_earth
        return cls(x, y)


@dataclass(frozen=True)
class TimeStamp:
    """Minutes since ``DEFAULT_ORIGIN`` on the 10-minute grid."""

    epoch: int

    def __post_init__(self):
        if self.epoch % TIME_STEP_MINUTES != 0:
            raise ValueError(f"epoch {self.epoch} is not on the 10-minute grid")

    @property
    def hour_of_day(self) -> float:
        return (self.epoch % 1440) / 60.0

    @classmethod
    def from_datetime(cls, dt: datetime) -> "TimeStamp":
        if dt.tzinfo is None:
            dt = dt.replace(tzinfo=timezone.utc)
        minutes = (dt - DEFAULT_ORIGIN) / timedelta(minutes=1)
        if minutes != int(minutes):
            raise ValueError(f"{dt} is not on a whole minute")
        return cls(int(minutes))

    def to_datetime(self) -> datetime:
        return DEFAULT_ORIGIN + timedelta(minutes=self.epoch)


@dataclass(frozen=True)
class WindSample:
    speed: float
    direction: float

    def __post_init__(self):
        if not self.speed >= 0:
            raise ValueError(f"wind speed must be >= 0, got {self.speed}")
        object.__setattr__(self, "direction", float(self.direction) % 360.0)


@dataclass(frozen=True)
class HeightLevel:
    h: float

    def __post_init__(self):
        if not self.h > 0:
            raise ValueError(f"height must be positive, got {self.h}")


def euclidean_distance(a: GeoLocation, b: GeoLocation) -> float:
    return math.hypot(a.x - b.x, a.y - b.y)


def pairwise_distances(xy_a, xy_b=None):
    """Euclidean distance matrix between rows of two ``(n, 2)`` arrays."""
    xy_a = np.atleast_2d(np.asarray(xy_a, dtype=float))
    xy_b = xy_a if xy_b is None else np.atleast_2d(np.asarray(xy_b, dtype=float))
    diff = xy_a[:, None, :] - xy_b[None, :, :]
    return np.sqrt(np.sum(diff**2, axis=-1))


def direction_components(direction):
    """Unit flow vector ``(U, V)`` for a meteorological FROM-direction.

    A northerly (0 deg) blows towards the south, giving ``(0, -1)``.
    Works elementwise on arrays.
    """
    theta = np.deg2rad(np.mod(direction, 360.0))
    return -np.sin(theta), -np.cos(theta)


def sqrt_transform(speed):
    speed = np.asarray(speed, dtype=float)
    if np.any(speed < 0):
        raise ValueError("wind speed must be non-negative")
    out = np.sqrt(speed)
    return float(out) if out.ndim == 0 else out


def square_back(x):
    """Inverse of :func:`sqrt_transform`; negative inputs clamp to 0."""
    x = np.maximum(np.asarray(x, dtype=float), 0.0)
    out = x * x
    return float(out) if out.ndim == 0 else out
