"""Deterministic synthetic weather stores and flight corpora.

Winds come from a westerly jet plus a smooth random stream function, so
they are divergence free and vary slowly in space, altitude and time.
Convection is a set of drifting discs with random echo tops on a torus
covering the domain.  Flights fly a filed plan at an altitude-dependent
true airspeed.  They point at the next waypoint without a wind correction
angle, so wind changes both ground speed and ground track, and they
sidestep storm cells at their flight level with a lateral repulsive
potential.  None of this is meant to be physical.
It only gives the model a weather-to-trajectory signal to learn.
"""
from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np

from .featurecube import WeatherStore
from .geo import AltitudeTable, GeoRef, WX_LEVELS_FT, isobaric_levels_ft
from .preprocess import Flight, FlightPlan, clean_trajectory, downsample

log = logging.getLogger(__name__)

MS_TO_KT = 1.943844
_LAPSE_K_PER_FT = 0.0019812
_TROPOPAUSE_FT = 36089.0


@dataclass(frozen=True)
class SynthConfig:
    seed: int = 0
    lon_range: tuple = (-100.0, -78.0)
    lat_range: tuple = (26.0, 40.0)
    resolution: tuple = (111, 71)
    atm_step_mb: float = 50.0
    wx_levels: tuple = WX_LEVELS_FT
    duration: float = 30 * 3600.0
    atm_cadence: float = 3600.0
    wx_cadence: float = 900.0
    # winds in m/s, scales in degrees
    jet_speed: float = 40.0
    jet_width: float = 3.0
    wind_amplitude: float = 12.0
    wind_modes: int = 4
    wind_scale: float = 8.0
    temp_amplitude: float = 3.0
    storm_cells: int = 14
    storm_coverage: float = 0.05
    storm_drift_kt: float = 15.0
    storm_tops: tuple = (30000.0, 50000.0)
    n_flights: int = 500
    origin: tuple = (-95.34, 29.98)
    destination: tuple = (-80.94, 35.21)
    n_waypoints: int = 8
    waypoint_jitter: float = 0.25
    corridor_bow: float = 0.8
    plan_adherence: float = 1.0
    avoidance_gain: float = 1.5
    avoidance_margin: float = 0.5
    cruise_tas_kt: float = 460.0
    low_tas_kt: float = 250.0
    speed_jitter: float = 0.03
    cruise_levels: tuple = (33000.0, 35000.0, 37000.0, 39000.0)
    climb_fpm: float = 2000.0
    descent_nm_per_kft: float = 3.0
    raw_cadence: float = 60.0
    max_steps: int = 1000
    departure_window: float = 24 * 3600.0
    train_fraction: float = 0.8

    def __post_init__(self):
        for name in ("lon_range", "lat_range", "resolution", "wx_levels", "storm_tops", "origin",
                     "destination", "cruise_levels"):
            object.__setattr__(self, name, tuple(getattr(self, name)))
        if not 0 <= self.storm_coverage < 1:
            raise ValueError("storm_coverage must lie in [0, 1)")
        if min(self.resolution) < 4:
            raise ValueError("store resolution must be at least 4x4")
        if self.lon_range[1] <= self.lon_range[0] or self.lat_range[1] <= self.lat_range[0]:
            raise ValueError("empty domain")
        if not 0 <= self.plan_adherence <= 1:
            raise ValueError("plan_adherence must lie in [0, 1]")
        if self.departure_window + 6 * 3600 > self.duration:
            raise ValueError("duration must exceed the departure window by 6 hours")
        if not 0 < self.train_fraction < 1:
            raise ValueError("train_fraction must lie in (0, 1)")

    def to_json(self) -> dict:
        return {k: list(v) if isinstance(v, tuple) else v for k, v in asdict(self).items()}


# -- analytic weather ---------------------------------------------------------

@dataclass(frozen=True)
class World:
    cfg: SynthConfig
    jet_lat: float
    modes: np.ndarray  # (m, 5): kx, ky, omega, phase, amplitude
    temp_modes: np.ndarray  # (m, 4): kx, ky, phase, amplitude
    cells: np.ndarray  # (c, 5): lon0, lat0, vlon, vlat (deg/s), top
    radius: float

    @classmethod
    def from_config(cls, cfg: SynthConfig) -> "World":
        rng = np.random.default_rng([cfg.seed, 0])
        lo0, lo1 = cfg.lon_range
        la0, la1 = cfg.lat_range
        jet_lat = rng.uniform(la0 + 0.3 * (la1 - la0), la1 - 0.3 * (la1 - la0))
        m = cfg.wind_modes
        k = 2 * math.pi / cfg.wind_scale
        ang = rng.uniform(0, 2 * math.pi, m)
        mag = k * rng.uniform(0.7, 1.3, m)
        modes = np.column_stack([
            mag * np.cos(ang), mag * np.sin(ang),
            rng.uniform(-1, 1, m) * 2 * math.pi / (12 * 3600.0),
            rng.uniform(0, 2 * math.pi, m),
            np.full(m, 1.0 / math.sqrt(max(m, 1))) / k,
        ])
        ta = rng.uniform(0, 2 * math.pi, 3)
        temp_modes = np.column_stack([k * np.cos(ta), k * np.sin(ta), rng.uniform(0, 2 * math.pi, 3),
                                      np.full(3, 1 / math.sqrt(3))])
        area = (lo1 - lo0) * (la1 - la0)
        n = cfg.storm_cells
        radius = math.sqrt(cfg.storm_coverage * area / (n * math.pi)) if n else 0.0
        heading = rng.uniform(0, 2 * math.pi, n)
        spd = cfg.storm_drift_kt / 60.0 / 3600.0
        cells = np.column_stack([
            rng.uniform(lo0, lo1, n), rng.uniform(la0, la1, n),
            spd * np.cos(heading), spd * np.sin(heading),
            rng.uniform(cfg.storm_tops[0], cfg.storm_tops[1], n),
        ])
        return cls(cfg, float(jet_lat), modes, temp_modes, cells, radius)

    def wind(self, lon, lat, alt, t):
        """Wind (u, v) in m/s; arrays broadcast."""
        cfg = self.cfg
        lon, lat, alt, t = (np.asarray(a, dtype=float) for a in (lon, lat, alt, t))
        prof = np.clip(alt / 35000.0, 0.0, 1.0)
        u = cfg.jet_speed * np.exp(-((lat - self.jet_lat) / cfg.jet_width) ** 2) * prof
        v = np.zeros(np.broadcast(lon, lat, alt, t).shape)
        amp = cfg.wind_amplitude * (0.4 + 0.6 * prof)
        for kx, ky, om, ph, a in self.modes:
            c = np.cos(kx * lon + ky * lat + om * t + ph)
            # velocity from stream function psi = a sin(...)
            u = u - amp * a * ky * c
            v = v + amp * a * kx * c
        u, v = np.broadcast_arrays(u, v)
        return u, v

    def temperature(self, lon, lat, alt):
        lon, lat, alt = (np.asarray(a, dtype=float) for a in (lon, lat, alt))
        base = 288.15 - _LAPSE_K_PER_FT * np.minimum(alt, _TROPOPAUSE_FT)
        pert = sum(a * np.sin(kx * lon + ky * lat + ph) for kx, ky, ph, a in self.temp_modes)
        return base + self.cfg.temp_amplitude * pert

    def cell_centers(self, t: float) -> np.ndarray:
        lo0, lo1 = self.cfg.lon_range
        la0, la1 = self.cfg.lat_range
        c = self.cells
        lon = lo0 + np.mod(c[:, 0] + c[:, 2] * t - lo0, lo1 - lo0)
        lat = la0 + np.mod(c[:, 1] + c[:, 3] * t - la0, la1 - la0)
        return np.column_stack([lon, lat])

    def cell_offsets(self, points, t: float) -> np.ndarray:
        """Wrapped (dlon, dlat) from every cell center to every point: (cells, n, 2)."""
        pts = np.asarray(points, dtype=float).reshape(-1, 2)
        w = self.cfg.lon_range[1] - self.cfg.lon_range[0]
        h = self.cfg.lat_range[1] - self.cfg.lat_range[0]
        d = pts[None] - self.cell_centers(t)[:, None]
        d[..., 0] = np.mod(d[..., 0] + w / 2, w) - w / 2
        d[..., 1] = np.mod(d[..., 1] + h / 2, h) - h / 2
        return d


def gen_weather(cfg: SynthConfig, world: Optional[World] = None) -> WeatherStore:
    world = world or World.from_config(cfg)
    georef = GeoRef.regular(cfg.lon_range[0], cfg.lon_range[1], cfg.lat_range[0], cfg.lat_range[1],
                            cfg.resolution[0], cfg.resolution[1])
    atm = AltitudeTable.atmospheric(isobaric_levels_ft(step_mb=cfg.atm_step_mb))
    wxt = AltitudeTable(cfg.wx_levels, "convective")
    atm_times = np.arange(0.0, cfg.duration + 1e-9, cfg.atm_cadence)
    wx_times = np.arange(0.0, cfg.duration + 1e-9, cfg.wx_cadence)
    lon, lat = georef.points[:, 0], georef.points[:, 1]
    levels = atm.as_array()
    shape = (atm_times.size, levels.size, georef.n)
    u = np.empty(shape, dtype=np.float32)
    v = np.empty(shape, dtype=np.float32)
    temp = np.empty(shape, dtype=np.float32)
    for i, t in enumerate(atm_times):
        for j, alt in enumerate(levels):
            uu, vv = world.wind(lon, lat, alt, t)
            u[i, j], v[i, j] = uu, vv
            temp[i, j] = world.temperature(lon, lat, alt)
    wx = np.zeros((wx_times.size, len(wxt), georef.n), dtype=np.uint8)
    wx_levels = wxt.as_array()
    if world.cells.shape[0]:
        for i, t in enumerate(wx_times):
            d = world.cell_offsets(georef.points, t)
            inside = np.hypot(d[..., 0], d[..., 1]) <= world.radius  # (cells, n)
            tops = world.cells[:, 4]
            for j, level in enumerate(wx_levels):
                active = level <= tops
                if active.any():
                    wx[i, j] = inside[active].any(axis=0)
    return WeatherStore(georef, atm, wxt, atm_times, wx_times, u, v, temp, wx)


def convective_fraction(store: WeatherStore, level: int = 0) -> float:
    return float(store.wx[:, level].mean())


# -- flights --------------------------------------------------------------------

def _nominal_route(cfg: SynthConfig) -> np.ndarray:
    o = np.asarray(cfg.origin, dtype=float)
    d = np.asarray(cfg.destination, dtype=float)
    ax = d - o
    perp = np.array([-ax[1], ax[0]]) / np.hypot(*ax)
    s = np.arange(1, cfg.n_waypoints + 1) / (cfg.n_waypoints + 1)
    mid = o + s[:, None] * ax + (cfg.corridor_bow * np.sin(math.pi * s))[:, None] * perp
    return np.vstack([o, mid, d])


def _nm_vec(dlonlat, lat):
    return np.array([dlonlat[0] * 60.0 * math.cos(math.radians(lat)), dlonlat[1] * 60.0])


def _deg_vec(nm, lat):
    return np.array([nm[0] / (60.0 * math.cos(math.radians(lat))), nm[1] / 60.0])


def _fly(cfg: SynthConfig, world: World, targets: np.ndarray, t0: float, cruise: float, tas_scale: float):
    """Point-mass integration at the raw cadence; returns rows (lon, lat, alt, t) or None."""
    pos = targets[0].astype(float).copy()
    k = 1
    t = t0
    rows = [(pos[0], pos[1], 0.0, t)]
    dest = targets[-1]

    def remaining_nm(p, k):
        d = np.hypot(*_nm_vec(targets[k] - p, p[1]))
        for a, b in zip(targets[k:-1], targets[k + 1:]):
            d += np.hypot(*_nm_vec(b - a, a[1]))
        return d

    def altitude(p, k, tt):
        climb = (tt - t0) / 60.0 * cfg.climb_fpm
        desc = remaining_nm(p, k) / cfg.descent_nm_per_kft * 1000.0 if k < len(targets) else 0.0
        return max(0.0, min(cruise, climb, desc))

    alt = 0.0
    for _ in range(cfg.max_steps):
        tas = (cfg.low_tas_kt + (cfg.cruise_tas_kt - cfg.low_tas_kt) * min(alt / 35000.0, 1.0)) * tas_scale
        u, v = world.wind(pos[0], pos[1], alt, t)
        w = np.array([float(u), float(v)]) * MS_TO_KT
        dt_rem = cfg.raw_cadence
        arrived = False
        while dt_rem > 0:
            to_t = _nm_vec(targets[k] - pos, pos[1])
            dist = math.hypot(*to_t)
            d_hat = to_t / dist if dist > 0 else np.zeros(2)
            push = _avoidance(cfg, world, pos, alt, t, d_hat, dest)
            direction = d_hat + push
            direction /= max(math.hypot(*direction), 1e-12)
            # the heading points at the target; wind is added uncorrected, so it drifts the track
            ground = tas * direction + w
            gs_s = max(math.hypot(*ground), 0.1 * tas) / 3600.0
            if dist <= gs_s * dt_rem:
                pos = targets[k].astype(float).copy()
                dt_rem -= dist / gs_s
                k += 1
                if k == len(targets):
                    arrived = True
                    break
            else:
                pos = pos + _deg_vec(ground / 3600.0 * dt_rem, pos[1])
                dt_rem = 0.0
        t_new = t + cfg.raw_cadence - max(dt_rem, 0.0)
        if arrived:
            if t_new - rows[-1][3] < 1.0:
                rows.pop()
            rows.append((dest[0], dest[1], 0.0, t_new))
            return np.asarray(rows)
        t = t_new
        alt = altitude(pos, k, t)
        rows.append((pos[0], pos[1], alt, t))
    return None


def _avoidance(cfg: SynthConfig, world: World, pos, alt, t, d_hat, dest) -> np.ndarray:
    if cfg.avoidance_gain == 0 or world.cells.shape[0] == 0:
        return np.zeros(2)
    if math.hypot(*(pos - dest)) < 2 * cfg.avoidance_margin:
        return np.zeros(2)
    d = world.cell_offsets(pos[None], t)[:, 0]  # (cells, 2) from cell to aircraft
    dist = np.hypot(d[:, 0], d[:, 1])
    active = (alt <= world.cells[:, 4]) & (dist < world.radius + cfg.avoidance_margin)
    if not active.any():
        return np.zeros(2)
    left = np.array([-d_hat[1], d_hat[0]])
    push = np.zeros(2)
    for i in np.flatnonzero(active):
        away = _nm_vec(d[i], pos[1])
        side = 1.0 if away @ left >= 0 else -1.0
        weight = min(1.0, (world.radius + cfg.avoidance_margin - dist[i]) / cfg.avoidance_margin)
        push += cfg.avoidance_gain * side * weight * left
    return push


def gen_flight(cfg: SynthConfig, world: World, idx: int) -> Optional[Flight]:
    """One flight from its own RNG stream; ``None`` if it never reaches the destination."""
    rng = np.random.default_rng([cfg.seed, 1, idx])
    nominal = _nominal_route(cfg)
    plan = nominal.copy()
    plan[1:-1] += rng.normal(0.0, cfg.waypoint_jitter, size=(len(nominal) - 2, 2))
    targets = nominal + cfg.plan_adherence * (plan - nominal)
    t0 = float(rng.uniform(0.0, cfg.departure_window))
    cruise = float(rng.choice(cfg.cruise_levels))
    tas_scale = 1.0 + float(rng.uniform(-cfg.speed_jitter, cfg.speed_jitter))
    raw = _fly(cfg, world, targets, t0, cruise, tas_scale)
    fid = f"SYN{cfg.seed:03d}-{idx:05d}"
    if raw is None:
        log.warning("flight %s did not reach its destination within %d steps; dropped", fid, cfg.max_steps)
        return None
    check = clean_trajectory(raw, (cfg.origin, cfg.destination))
    if not check:
        log.warning("flight %s rejected by cleaning (%s); dropped", fid, check.reason)
        return None
    return Flight(fid, FlightPlan(plan), downsample(raw))


def gen_flights(cfg: SynthConfig, world: Optional[World] = None) -> List[Flight]:
    world = world or World.from_config(cfg)
    out = []
    for i in range(cfg.n_flights):
        f = gen_flight(cfg, world, i)
        if f is not None:
            out.append(f)
    return out


def split_corpus(flights: Sequence[Flight], train_fraction: float = 0.8, seed: int = 0):
    """Seeded shuffle, then the first ``train_fraction`` for training and the rest for evaluation."""
    order = np.random.default_rng([seed, 2]).permutation(len(flights))
    n_train = int(round(train_fraction * len(flights)))
    return [flights[i] for i in order[:n_train]], [flights[i] for i in order[n_train:]]
