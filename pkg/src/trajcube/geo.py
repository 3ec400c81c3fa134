"""Coordinate conventions, altitude tables and distance/course primitives.

Positions are (lon, lat) in degrees, altitudes in feet and times in seconds
since the store's baseline time.  Courses are mathematical angles measured
counterclockwise from the +lon (east) axis.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

EARTH_RADIUS_NM = 3440.065

#: Storm altitude levels of the convective store, in feet.
WX_LEVELS_FT = tuple(v * 1000.0 for v in (0, 14, 20, 24, 29, 35, 39, 45, 50, 54, 60, 65, 69))

DEFAULT_BASELINE_TIME = "2013-01-01T00:00:00Z"


def pressure_to_altitude_ft(pressure_mb):
    """Standard-atmosphere pressure altitude in feet for a pressure in millibar."""
    p = np.asarray(pressure_mb, dtype=float)
    return 145366.45 * (1.0 - (p / 1013.25) ** 0.190284)


def isobaric_levels_ft(top_mb: float = 50.0, bottom_mb: float = 1000.0, step_mb: float = 25.0):
    """Altitudes of evenly spaced isobaric layers, ascending.

    The defaults give 39 layers between 1000 mb and 50 mb.
    """
    pressures = np.arange(bottom_mb, top_mb - 1e-9, -step_mb)
    return tuple(float(a) for a in pressure_to_altitude_ft(pressures))


@dataclass(frozen=True)
class AltitudeTable:
    levels: tuple
    kind: str = "convective"

    def __post_init__(self):
        levels = tuple(float(v) for v in self.levels)
        if not levels:
            raise ValueError("altitude table is empty")
        if any(b <= a for a, b in zip(levels, levels[1:])):
            raise ValueError("altitude levels must be strictly ascending")
        if self.kind not in ("atmospheric", "convective"):
            raise ValueError(f"unknown altitude table kind {self.kind!r}")
        object.__setattr__(self, "levels", levels)

    @classmethod
    def convective(cls) -> "AltitudeTable":
        return cls(WX_LEVELS_FT, "convective")

    @classmethod
    def atmospheric(cls, levels: Optional[Sequence[float]] = None) -> "AltitudeTable":
        return cls(isobaric_levels_ft() if levels is None else tuple(levels), "atmospheric")

    def __len__(self):
        return len(self.levels)

    def as_array(self) -> np.ndarray:
        return np.asarray(self.levels, dtype=float)


@dataclass(frozen=True)
class GeoRef:
    """Fixed horizontal grid points indexing every weather field.

    Row ``i`` of ``points`` is the permanent identity of grid point ``i``;
    no rectangular factorization is assumed.
    """

    points: np.ndarray = field(repr=False)

    def __post_init__(self):
        pts = np.array(self.points, dtype=np.float64)
        if pts.ndim != 2 or pts.shape[1] != 2 or pts.shape[0] < 1:
            raise ValueError("georef points must be a non-empty (n, 2) array of (lon, lat)")
        if not np.all(np.isfinite(pts)):
            raise ValueError("georef points must be finite")
        if np.any(np.abs(pts[:, 0]) > 180) or np.any(np.abs(pts[:, 1]) > 90):
            raise ValueError("georef point outside lon [-180, 180] / lat [-90, 90]")
        pts.setflags(write=False)
        object.__setattr__(self, "points", pts)

    @property
    def n(self) -> int:
        return self.points.shape[0]

    @classmethod
    def regular(cls, lon_min, lon_max, lat_min, lat_max, n_lon, n_lat) -> "GeoRef":
        """Lattice ordered row by row (latitude outer, longitude inner)."""
        lons = np.linspace(lon_min, lon_max, n_lon)
        lats = np.linspace(lat_min, lat_max, n_lat)
        lon_g, lat_g = np.meshgrid(lons, lats)
        return cls(np.column_stack([lon_g.ravel(), lat_g.ravel()]))


@dataclass(frozen=True)
class TrackPoint:
    lon: float
    lat: float
    alt: float
    t: float
    course: Optional[float] = None
    lon_spd: Optional[float] = None
    lat_spd: Optional[float] = None

    def __post_init__(self):
        if self.t < 0:
            raise ValueError("track point time must be >= 0")
        if self.alt < 0:
            raise ValueError("track point altitude must be >= 0")
        if self.course is not None and not -math.pi <= self.course <= math.pi:
            raise ValueError("course must lie in [-pi, pi]")

    @property
    def lonlat(self):
        return (self.lon, self.lat)


def nearest_level(alt: float, table: AltitudeTable) -> int:
    """Index of the table level closest to ``alt``; ties go to the lower level."""
    return int(nearest_levels(np.asarray([alt], dtype=float), table)[0])


def nearest_levels(alts, table: AltitudeTable) -> np.ndarray:
    """Vectorized :func:`nearest_level`."""
    levels = table.as_array()
    alts = np.asarray(alts, dtype=float)
    upper = np.clip(np.searchsorted(levels, alts, side="left"), 0, len(levels) - 1)
    lower = np.clip(upper - 1, 0, len(levels) - 1)
    d_low = np.abs(alts - levels[lower])
    d_up = np.abs(levels[upper] - alts)
    return np.where(d_low <= d_up, lower, upper).astype(np.int64)


def haversine_nm(a, b):
    """Great-circle distance in nautical miles between (lon, lat) pairs.

    Accepts single pairs or arrays of shape (..., 2).
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    lon1, lat1 = np.radians(a[..., 0]), np.radians(a[..., 1])
    lon2, lat2 = np.radians(b[..., 0]), np.radians(b[..., 1])
    h = np.sin((lat2 - lat1) / 2) ** 2 + np.cos(lat1) * np.cos(lat2) * np.sin((lon2 - lon1) / 2) ** 2
    d = 2 * EARTH_RADIUS_NM * np.arcsin(np.sqrt(np.clip(h, 0.0, 1.0)))
    return float(d) if d.ndim == 0 else d


def course_between(p1, p2) -> float:
    """Direction of travel from ``p1`` to ``p2`` in flat lon/lat coordinates."""
    dlon = float(p2[0]) - float(p1[0])
    dlat = float(p2[1]) - float(p1[1])
    if dlon == 0.0 and dlat == 0.0:
        raise ValueError("degenerate segment")
    return math.atan2(dlat, dlon)
