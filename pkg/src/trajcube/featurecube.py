"""Feature cube grids and 4D matching against gridded weather.

A feature cube grid is an ``nx`` by ``ny`` lattice placed ahead of a track
point and rotated into its course.  Matching looks each grid point up in the
weather store by nearest horizontal grid point, nearest pressure/storm level
and nearest time within a bound, giving an ``(nx, ny, 4)`` cube with channels
``[convective, temperature, u_wind, v_wind]``.

The same code path serves batch mode (every point of every flight at once)
and recursive mode (one freshly generated point); results are identical.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional, Sequence

import numpy as np

from .geo import DEFAULT_BASELINE_TIME, AltitudeTable, GeoRef, TrackPoint, nearest_levels
from .kdtree import BruteForceIndex, KDTree

CONVECTIVE, TEMPERATURE, U_WIND, V_WIND = range(4)
CHANNELS = ("convective", "temperature", "u_wind", "v_wind")

STORE_FORMAT = "trajcube-weather/1"


@dataclass(frozen=True)
class GridParams:
    dx: float = 2.0
    dy: float = 2.0
    nx: int = 20
    ny: int = 20

    def __post_init__(self):
        if not (self.dx > 0 and self.dy > 0):
            raise ValueError("grid size must be positive")
        if self.nx < 2 or self.ny < 2:
            raise ValueError("grid resolution must be at least 2x2")

    def local_offsets(self) -> np.ndarray:
        """Unrotated grid, row ``k = p * nx + q`` at ``(q*ddx, -dy/2 + p*ddy)``."""
        q = np.tile(np.arange(self.nx), self.ny)
        p = np.repeat(np.arange(self.ny), self.nx)
        ddx = self.dx / (self.nx - 1)
        ddy = self.dy / (self.ny - 1)
        return np.column_stack([q * ddx, -self.dy / 2 + p * ddy])


@dataclass(frozen=True)
class FeatureCubeGrid:
    points: np.ndarray = field(repr=False)
    atm_level: int
    wx_level: int
    t: float


@dataclass(frozen=True)
class FeatureCube:
    data: np.ndarray = field(repr=False)
    missing: tuple = (False, False, False, False)


@dataclass(frozen=True)
class GridBatch:
    """Grids for many points stored as stacked arrays."""

    points: np.ndarray  # (m, nx*ny, 2)
    atm_level: np.ndarray  # (m,)
    wx_level: np.ndarray  # (m,)
    t: np.ndarray  # (m,)
    params: GridParams

    def __len__(self):
        return self.points.shape[0]

    def __getitem__(self, i) -> FeatureCubeGrid:
        return FeatureCubeGrid(self.points[i], int(self.atm_level[i]), int(self.wx_level[i]), float(self.t[i]))


# -- weather store ------------------------------------------------------------

@dataclass
class WeatherStore:
    """Gridded u/v/temperature and binary convection, laid out [time][level][point]."""

    georef: GeoRef
    atm_table: AltitudeTable
    wx_table: AltitudeTable
    atm_times: np.ndarray
    wx_times: np.ndarray
    u: np.ndarray
    v: np.ndarray
    temp: np.ndarray
    wx: np.ndarray
    baseline_time: str = DEFAULT_BASELINE_TIME

    def __post_init__(self):
        self.atm_times = np.asarray(self.atm_times, dtype=np.float64)
        self.wx_times = np.asarray(self.wx_times, dtype=np.float64)
        for name, times in (("atm_times", self.atm_times), ("wx_times", self.wx_times)):
            if times.ndim != 1 or times.size == 0:
                raise ValueError(f"{name} must be a non-empty 1-d array")
            if np.any(np.diff(times) <= 0):
                raise ValueError(f"{name} must be strictly ascending")
        n = self.georef.n
        atm_shape = (self.atm_times.size, len(self.atm_table), n)
        for name in ("u", "v", "temp"):
            arr = np.asarray(getattr(self, name), dtype=np.float32)
            if arr.shape != atm_shape:
                raise ValueError(f"{name} has shape {arr.shape}, expected {atm_shape}")
            setattr(self, name, arr)
        wx = np.asarray(self.wx)
        wx_shape = (self.wx_times.size, len(self.wx_table), n)
        if wx.shape != wx_shape:
            raise ValueError(f"wx has shape {wx.shape}, expected {wx_shape}")
        if np.any((wx != 0) & (wx != 1)):
            raise ValueError("convective values must be 0 or 1")
        self.wx = wx.astype(np.uint8)

    def save(self, directory) -> None:
        d = Path(directory)
        d.mkdir(parents=True, exist_ok=True)
        files = {}
        for name, dtype in (("u", "<f4"), ("v", "<f4"), ("temp", "<f4"), ("wx", "u1")):
            arr = np.ascontiguousarray(getattr(self, name), dtype=dtype)
            fname = f"{name}.bin"
            arr.tofile(d / fname)
            files[name] = {"path": fname, "dtype": dtype, "shape": list(arr.shape)}
        manifest = {
            "format": STORE_FORMAT,
            "baseline_time": self.baseline_time,
            "layout": "[time][level][point]",
            "georef": self.georef.points.tolist(),
            "atm_levels_ft": list(self.atm_table.levels),
            "wx_levels_ft": list(self.wx_table.levels),
            "atm_times": self.atm_times.tolist(),
            "wx_times": self.wx_times.tolist(),
            "files": files,
        }
        (d / "manifest.json").write_text(json.dumps(manifest))

    @classmethod
    def load(cls, directory) -> "WeatherStore":
        d = Path(directory)
        path = d / "manifest.json"
        if not path.exists():
            raise ValueError(f"no weather store manifest at {path}")
        m = json.loads(path.read_text())
        if m.get("format") != STORE_FORMAT:
            raise ValueError(f"{path}: unsupported store format {m.get('format')!r}")
        arrays = {}
        for name in ("u", "v", "temp", "wx"):
            spec = m["files"][name]
            expected = int(np.prod(spec["shape"]))
            arr = np.fromfile(d / spec["path"], dtype=spec["dtype"])
            if arr.size != expected:
                raise ValueError(f"{name}: payload has {arr.size} values, manifest declares {expected}")
            arrays[name] = arr.reshape(spec["shape"])
        return cls(
            GeoRef(np.asarray(m["georef"], dtype=float)),
            AltitudeTable(m["atm_levels_ft"], "atmospheric"),
            AltitudeTable(m["wx_levels_ft"], "convective"),
            m["atm_times"], m["wx_times"],
            arrays["u"], arrays["v"], arrays["temp"], arrays["wx"],
            m.get("baseline_time", DEFAULT_BASELINE_TIME),
        )


@dataclass(frozen=True)
class MatchIndex:
    spatial: object
    atm_times: np.ndarray
    wx_times: np.ndarray

    def query_space(self, points):
        return self.spatial.query(points)[0]

    def query_atm_time(self, t, bound):
        return nearest_time(self.atm_times, t, bound)

    def query_wx_time(self, t, bound):
        return nearest_time(self.wx_times, t, bound)


def nearest_time(times, t, bound: float) -> np.ndarray:
    """Index of the nearest time within ``bound`` seconds, or -1.

    Ties go to the earlier time.
    """
    times = np.asarray(times, dtype=float)
    t = np.atleast_1d(np.asarray(t, dtype=float))
    hi = np.clip(np.searchsorted(times, t, side="left"), 0, times.size - 1)
    lo = np.clip(hi - 1, 0, times.size - 1)
    d_lo = np.abs(t - times[lo])
    d_hi = np.abs(times[hi] - t)
    idx = np.where(d_lo <= d_hi, lo, hi)
    dist = np.minimum(d_lo, d_hi)
    return np.where(dist <= bound, idx, -1).astype(np.int64)


def build_index(store: WeatherStore, brute_force: bool = False) -> MatchIndex:
    """Spatial tree over the georef plus temporal lookups over both time axes."""
    if store.georef.n == 0 or store.atm_times.size == 0 or store.wx_times.size == 0:
        raise ValueError("cannot index an empty store")
    spatial = BruteForceIndex(store.georef.points) if brute_force else KDTree(store.georef.points)
    return MatchIndex(spatial, store.atm_times, store.wx_times)


# -- grids ----------------------------------------------------------------------

def _as_point_array(points) -> np.ndarray:
    """Rows of ``[lon, lat, alt, t, course]`` from TrackPoints or arrays."""
    if isinstance(points, TrackPoint):
        points = [points]
    if isinstance(points, (list, tuple)) and points and isinstance(points[0], TrackPoint):
        rows = []
        for p in points:
            if p.course is None:
                raise ValueError("track point has no course")
            rows.append([p.lon, p.lat, p.alt, p.t, p.course])
        return np.asarray(rows, dtype=float)
    arr = np.atleast_2d(np.asarray(points, dtype=float))
    if arr.shape[1] < 5:
        raise ValueError("track points need a course (derive kinematics first)")
    arr = arr[:, :5]
    if np.any(np.isnan(arr[:, 4])):
        raise ValueError("track point has no course")
    return arr


def generate_grid_batch(points, atm_table: AltitudeTable, wx_table: AltitudeTable,
                        params: GridParams = GridParams()) -> GridBatch:
    pts = _as_point_array(points)
    offsets = params.local_offsets()
    # scalar trig per point: vectorized kernels may round differently by array length
    c = np.array([math.cos(v) for v in pts[:, 4]])[:, None]
    s = np.array([math.sin(v) for v in pts[:, 4]])[:, None]
    gx = offsets[None, :, 0]
    gy = offsets[None, :, 1]
    lon = c * gx - s * gy + pts[:, 0:1]
    lat = s * gx + c * gy + pts[:, 1:2]
    return GridBatch(
        np.stack([lon, lat], axis=-1),
        nearest_levels(pts[:, 2], atm_table),
        nearest_levels(pts[:, 2], wx_table),
        pts[:, 3].copy(),
        params,
    )


def generate_grids(points, atm_table: AltitudeTable, wx_table: AltitudeTable,
                   params: GridParams = GridParams()) -> List[FeatureCubeGrid]:
    """One rotated, translated feature cube grid per track point."""
    batch = generate_grid_batch(points, atm_table, wx_table, params)
    return [batch[i] for i in range(len(batch))]


def _to_batch(grids, params: Optional[GridParams]) -> GridBatch:
    if isinstance(grids, GridBatch):
        return grids
    if isinstance(grids, FeatureCubeGrid):
        grids = [grids]
    n_pts = grids[0].points.shape[0]
    if params is None:
        side = int(round(np.sqrt(n_pts)))
        params = GridParams(nx=side, ny=n_pts // side)
    return GridBatch(
        np.stack([g.points for g in grids]),
        np.asarray([g.atm_level for g in grids], dtype=np.int64),
        np.asarray([g.wx_level for g in grids], dtype=np.int64),
        np.asarray([g.t for g in grids], dtype=float),
        params,
    )


def _to_cube_layout(flat, params: GridParams) -> np.ndarray:
    """(m, nx*ny, ...) rows in k = p*nx + q order -> (m, nx, ny, ...)."""
    m = flat.shape[0]
    rest = flat.shape[2:]
    grid = flat.reshape((m, params.ny, params.nx) + rest)
    return np.ascontiguousarray(np.swapaxes(grid, 1, 2))


def _match_atm(batch: GridBatch, store: WeatherStore, index: MatchIndex, sp_idx, tb):
    t_idx = index.query_atm_time(batch.t, tb)
    missing = t_idx < 0
    safe_t = np.where(missing, 0, t_idx)[:, None]
    lvl = batch.atm_level[:, None]
    out = np.empty(sp_idx.shape + (3,), dtype=np.float32)
    for ch, arr in enumerate((store.temp, store.u, store.v)):
        out[..., ch] = arr[safe_t, lvl, sp_idx]
    out[missing] = 0.0
    return out, missing


def _match_wx(batch: GridBatch, store: WeatherStore, index: MatchIndex, sp_idx, ab, tb):
    t_idx = index.query_wx_time(batch.t, tb)
    missing = t_idx < 0
    levels = store.wx_table.as_array()
    grid_alt = levels[batch.wx_level]
    in_buffer = np.abs(levels[None, :] - grid_alt[:, None]) <= ab  # (m, L)
    safe_t = np.where(missing, 0, t_idx)
    gathered = store.wx[safe_t[:, None, None], np.arange(levels.size)[None, :, None], sp_idx[:, None, :]]
    out = np.any(gathered.astype(bool) & in_buffer[:, :, None], axis=1)
    out[missing] = False
    return out.astype(np.float32), missing


def match_atmospheric(grid, store: WeatherStore, index: MatchIndex, tb: float = 3600.0,
                      params: Optional[GridParams] = None):
    """Temperature, u and v at every grid point, each ``(nx, ny)``.

    Returns ``(channels, missing)`` with channels shaped (3, nx, ny) for a
    single grid, or (m, 3, nx, ny) for a batch.
    """
    single = isinstance(grid, FeatureCubeGrid)
    batch = _to_batch(grid, params)
    sp_idx = index.query_space(batch.points.reshape(-1, 2)).reshape(batch.points.shape[:2])
    vals, missing = _match_atm(batch, store, index, sp_idx, tb)
    chans = np.moveaxis(_to_cube_layout(vals, batch.params), -1, 1)
    return (chans[0], bool(missing[0])) if single else (chans, missing)


def match_convective(grid, store: WeatherStore, index: MatchIndex, ab: float = 20000.0,
                     tb: float = 3600.0, params: Optional[GridParams] = None):
    """Binary convection OR-ed over storm levels within ``ab`` feet."""
    single = isinstance(grid, FeatureCubeGrid)
    batch = _to_batch(grid, params)
    sp_idx = index.query_space(batch.points.reshape(-1, 2)).reshape(batch.points.shape[:2])
    vals, missing = _match_wx(batch, store, index, sp_idx, ab, tb)
    chans = _to_cube_layout(vals, batch.params)
    return (chans[0], bool(missing[0])) if single else (chans, missing)


def match_batch(grids, store: WeatherStore, index: MatchIndex, ab: float = 20000.0,
                tb: float = 3600.0, params: Optional[GridParams] = None):
    """Raw (unnormalized) cubes ``(m, nx, ny, 4)`` and missing flags ``(m, 4)``."""
    batch = _to_batch(grids, params)
    m = len(batch)
    sp_idx = index.query_space(batch.points.reshape(-1, 2)).reshape(batch.points.shape[:2])
    atm, atm_missing = _match_atm(batch, store, index, sp_idx, tb)
    wx, wx_missing = _match_wx(batch, store, index, sp_idx, ab, tb)
    flat = np.concatenate([wx[..., None], atm], axis=-1)
    cubes = _to_cube_layout(flat, batch.params)
    missing = np.zeros((m, 4), dtype=bool)
    missing[:, CONVECTIVE] = wx_missing
    missing[:, 1:] = atm_missing[:, None]
    return cubes, missing


def assemble_cube(grid: FeatureCubeGrid, store: WeatherStore, index: MatchIndex, normalizer=None,
                  ab: float = 20000.0, tb: float = 3600.0, params: Optional[GridParams] = None) -> FeatureCube:
    """Stack the matched channels into one cube, z-scoring all but convection."""
    cubes, missing = match_batch([grid], store, index, ab, tb, params)
    data = cubes[0].astype(np.float64)
    if normalizer is not None:
        data = normalizer.normalize_cubes(data)
        data[..., 1:][..., missing[0, 1:]] = 0.0
    return FeatureCube(data, tuple(bool(x) for x in missing[0]))


def match_points(points, store: WeatherStore, index: MatchIndex, params: GridParams = GridParams(),
                 ab: float = 20000.0, tb: float = 3600.0):
    """Grid generation and matching in one call; rows of ``[lon, lat, alt, t, course]``."""
    batch = generate_grid_batch(points, store.atm_table, store.wx_table, params)
    return match_batch(batch, store, index, ab, tb)


def match_flight(kinematic_track, store: WeatherStore, index: MatchIndex,
                 params: GridParams = GridParams(), ab: float = 20000.0, tb: float = 3600.0):
    """Batch-mode matching of every point of a kinematic track (T, 7)."""
    return match_points(np.asarray(kinematic_track)[:, :5], store, index, params, ab, tb)
