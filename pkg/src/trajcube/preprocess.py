"""Flight cleaning, downsampling, kinematics, plan partitioning and normalization.

Tracks are numpy arrays with one row per sample.  A raw track has the columns
``[lon, lat, alt, t]``; :func:`derive_kinematics` appends
``[course, lon_spd, lat_spd]``.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, List, Optional, Sequence

import numpy as np

from .geo import course_between

LON, LAT, ALT, T, COURSE, LON_SPD, LAT_SPD = range(7)
STATE_COLUMNS = (LON, LAT, ALT, LON_SPD, LAT_SPD)
STATE_NAMES = ("lon", "lat", "alt", "lon_spd", "lat_spd")


@dataclass(frozen=True)
class FlightPlan:
    waypoints: np.ndarray = field(repr=False)

    def __post_init__(self):
        wp = np.array(self.waypoints, dtype=np.float64)
        if wp.ndim != 2 or wp.shape[1] != 2:
            raise ValueError("flight plan waypoints must have shape (n, 2)")
        if wp.shape[0] < 2:
            raise ValueError("flight plan needs at least 2 waypoints")
        wp.setflags(write=False)
        object.__setattr__(self, "waypoints", wp)

    def __len__(self):
        return self.waypoints.shape[0]


@dataclass(frozen=True)
class Flight:
    id: str
    plan: FlightPlan
    track: np.ndarray = field(repr=False)

    def __post_init__(self):
        tr = np.array(self.track, dtype=np.float64)
        if tr.ndim != 2 or tr.shape[1] < 4:
            raise ValueError(f"flight {self.id}: track must have shape (T, 4)")
        if tr.shape[0] < 2:
            raise ValueError(f"flight {self.id}: track needs at least 2 points")
        if np.any(np.diff(tr[:, T]) <= 0):
            raise ValueError(f"flight {self.id}: track times must be strictly increasing")
        tr = tr[:, :4].copy()
        tr.setflags(write=False)
        object.__setattr__(self, "track", tr)

    def __len__(self):
        return self.track.shape[0]

    def to_json(self) -> dict:
        return {
            "id": self.id,
            "plan": self.plan.waypoints.tolist(),
            "track": self.track.tolist(),
        }

    @classmethod
    def from_json(cls, obj: dict) -> "Flight":
        try:
            return cls(str(obj["id"]), FlightPlan(obj["plan"]), np.asarray(obj["track"], dtype=float))
        except KeyError as exc:
            raise ValueError(f"flight record missing field {exc}") from None


def read_flights(path) -> List[Flight]:
    flights = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                flights.append(Flight.from_json(json.loads(line)))
            except (json.JSONDecodeError, ValueError) as exc:
                raise ValueError(f"{path}:{lineno}: {exc}") from None
    return flights


def write_flights(path, flights: Iterable[Flight]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for f in flights:
            fh.write(json.dumps(f.to_json(), separators=(",", ":")) + "\n")


# -- cleaning ---------------------------------------------------------------

@dataclass(frozen=True)
class CleanResult:
    accepted: bool
    reason: Optional[str] = None

    def __bool__(self):
        return self.accepted


def _in_box(point, center, half_width) -> bool:
    return abs(point[0] - center[0]) <= half_width and abs(point[1] - center[1]) <= half_width


def clean_trajectory(track, terminal_boxes, max_gap: float = 300.0, max_jump: float = 1.0,
                     box_half_width: float = 0.25) -> CleanResult:
    """Screen a time-sorted track for discontinuities and terminal-area coverage.

    ``terminal_boxes`` is a pair of (lon, lat) box centers for the origin and
    destination.  The default half width makes each box 0.5 degrees on a side.
    """
    tr = np.asarray(track, dtype=float)
    if tr.shape[0] < 2:
        return CleanResult(False, "too short")
    dt = np.diff(tr[:, T])
    if np.any(dt <= 0) or np.any(dt > max_gap):
        return CleanResult(False, "temporal discontinuity")
    jumps = np.hypot(np.diff(tr[:, LON]), np.diff(tr[:, LAT]))
    if np.any(jumps > max_jump):
        return CleanResult(False, "spatial discontinuity")
    origin, dest = terminal_boxes
    if not (_in_box(tr[0], origin, box_half_width) and _in_box(tr[-1], dest, box_half_width)):
        return CleanResult(False, "outside terminal area")
    return CleanResult(True)


def downsample(track) -> np.ndarray:
    """Drop every second sample, always keeping the final one."""
    tr = np.asarray(track)
    idx = list(range(0, tr.shape[0], 2))
    if idx[-1] != tr.shape[0] - 1:
        idx.append(tr.shape[0] - 1)
    return tr[idx]


def derive_kinematics(track) -> np.ndarray:
    """Append course and lon/lat speeds assuming constant velocity per segment."""
    tr = np.asarray(track, dtype=float)[:, :4]
    n = tr.shape[0]
    if n < 2:
        raise ValueError("need at least 2 points to derive kinematics")
    dt = np.diff(tr[:, T])
    if np.any(dt == 0):
        raise ValueError("zero dt")
    out = np.empty((n, 7))
    out[:, :4] = tr
    out[:-1, LON_SPD] = np.diff(tr[:, LON]) / dt
    out[:-1, LAT_SPD] = np.diff(tr[:, LAT]) / dt
    for i in range(n - 1):
        out[i, COURSE] = course_between(tr[i, :2], tr[i + 1, :2])
    out[-1, 4:] = out[-2, 4:]
    return out


def track_states(track) -> np.ndarray:
    """Aircraft states ``[lon, lat, alt, lon_spd, lat_spd]`` for every sample."""
    kin = np.asarray(track, dtype=float)
    if kin.shape[1] < 7:
        kin = derive_kinematics(kin)
    return kin[:, STATE_COLUMNS]


# -- flight plan partitioning -------------------------------------------------

def _log2(x):
    return math.log2(1.0 + x)


def _perp_angle_dist(a0, a1, b0, b1):
    """Perpendicular and angular distance of segment b against chord a."""
    ax, ay = a1[0] - a0[0], a1[1] - a0[1]
    la = math.hypot(ax, ay)
    bx, by = b1[0] - b0[0], b1[1] - b0[1]
    lb = math.hypot(bx, by)
    if la == 0.0:
        l1 = math.hypot(b0[0] - a0[0], b0[1] - a0[1])
        l2 = math.hypot(b1[0] - a0[0], b1[1] - a0[1])
        d_perp = (l1 * l1 + l2 * l2) / (l1 + l2) if l1 + l2 > 0 else 0.0
        return d_perp, lb
    l1 = abs(ax * (b0[1] - a0[1]) - ay * (b0[0] - a0[0])) / la
    l2 = abs(ax * (b1[1] - a0[1]) - ay * (b1[0] - a0[0])) / la
    d_perp = (l1 * l1 + l2 * l2) / (l1 + l2) if l1 + l2 > 0 else 0.0
    if lb == 0.0:
        return d_perp, 0.0
    cos_t = max(-1.0, min(1.0, (ax * bx + ay * by) / (la * lb)))
    d_theta = lb * math.sqrt(max(0.0, 1.0 - cos_t * cos_t)) if cos_t > 0 else lb
    return d_perp, d_theta


def _mdl_chord(pts, i, j) -> float:
    """Description length when pts[i..j] is replaced by the chord pts[i]-pts[j]."""
    a0, a1 = pts[i], pts[j]
    cost = _log2(math.hypot(a1[0] - a0[0], a1[1] - a0[1]))
    for k in range(i, j):
        d_perp, d_theta = _perp_angle_dist(a0, a1, pts[k], pts[k + 1])
        cost += _log2(d_perp) + _log2(d_theta)
    return cost


def _mdl_keep(pts, i, j) -> float:
    return sum(_log2(math.hypot(pts[k + 1][0] - pts[k][0], pts[k + 1][1] - pts[k][1]))
               for k in range(i, j))


def partition_flight_plan(plan: FlightPlan, alpha: float = 1.0) -> FlightPlan:
    """Reduce a plan to its characteristic points by greedy MDL partitioning.

    A characteristic point is emitted when ``alpha`` times the chord's
    description length exceeds the cost of keeping the original segments, so
    larger ``alpha`` keeps more points.
    """
    if not 1.0 <= alpha <= 2.0:
        raise ValueError("alpha must lie in [1, 2]")
    pts = [tuple(p) for p in np.asarray(plan.waypoints, dtype=float)]
    n = len(pts)
    keep = [0]
    start, length = 0, 1
    while start + length < n:
        curr = start + length
        if length >= 2 and alpha * _mdl_chord(pts, start, curr) > _mdl_keep(pts, start, curr):
            keep.append(curr - 1)
            start, length = curr - 1, 1
        else:
            length += 1
    if keep[-1] != n - 1:
        keep.append(n - 1)
    return FlightPlan(np.asarray(plan.waypoints)[keep])


# -- normalization ------------------------------------------------------------

@dataclass(frozen=True)
class NormalizedFlight:
    id: str
    plan: np.ndarray
    states: np.ndarray
    times: np.ndarray


@dataclass
class Normalizer:
    """Origin offset plus per-channel z-scoring for states, plans and weather.

    ``weather_mean``/``weather_std`` cover the temperature, u-wind and v-wind
    channels of a feature cube; the convective channel is never scaled.
    """

    origin: np.ndarray
    state_mean: np.ndarray
    state_std: np.ndarray
    plan_mean: np.ndarray
    plan_std: np.ndarray
    weather_mean: np.ndarray = field(default_factory=lambda: np.zeros(3))
    weather_std: np.ndarray = field(default_factory=lambda: np.ones(3))

    def __post_init__(self):
        for name in ("origin", "state_mean", "state_std", "plan_mean", "plan_std",
                     "weather_mean", "weather_std"):
            setattr(self, name, np.asarray(getattr(self, name), dtype=np.float64))
        for name in ("state_std", "plan_std", "weather_std"):
            if np.any(~(getattr(self, name) > 0)):
                raise ValueError(f"normalizer {name} must be > 0 in every channel")

    @property
    def state_offset(self) -> np.ndarray:
        return np.array([self.origin[0], self.origin[1], self.origin[2], 0.0, 0.0])

    @classmethod
    def fit(cls, flights: Sequence[Flight], origin=None, cubes=None, cube_missing=None) -> "Normalizer":
        """Fit on a training split.

        ``origin`` defaults to the mean first track point.  ``cubes`` is an
        optional list of (T, nx, ny, 4) arrays with matching ``cube_missing``
        (T, 4) flags; missing cubes are excluded from the weather statistics.
        """
        if not flights:
            raise ValueError("cannot fit a normalizer on an empty training set")
        if origin is None:
            origin = np.mean([f.track[0, :3] for f in flights], axis=0)
        origin = np.asarray(origin, dtype=float)
        offset = np.array([origin[0], origin[1], origin[2], 0.0, 0.0])
        states = np.concatenate([track_states(f.track) for f in flights]) - offset
        plans = np.concatenate([f.plan.waypoints for f in flights]) - origin[:2]
        s_std = states.std(axis=0)
        p_std = plans.std(axis=0)
        for names, std in ((STATE_NAMES, s_std), (("plan_lon", "plan_lat"), p_std)):
            bad = [nm for nm, s in zip(names, std) if not s > 0]
            if bad:
                raise ValueError(f"zero variance in channel(s) {', '.join(bad)}")
        w_mean, w_std = np.zeros(3), np.ones(3)
        if cubes:
            w_mean, w_std = _weather_stats(cubes, cube_missing)
        return cls(origin, states.mean(axis=0), s_std, plans.mean(axis=0), p_std, w_mean, w_std)

    def normalize_states(self, states) -> np.ndarray:
        return (np.asarray(states, dtype=float) - self.state_offset - self.state_mean) / self.state_std

    def denormalize_states(self, z) -> np.ndarray:
        return np.asarray(z, dtype=float) * self.state_std + self.state_mean + self.state_offset

    def denormalize_cov(self, cov) -> np.ndarray:
        """Map a covariance of normalized states to physical units."""
        d = self.state_std
        return np.asarray(cov) * d[:, None] * d[None, :]

    def normalize_plan(self, waypoints) -> np.ndarray:
        return (np.asarray(waypoints, dtype=float) - self.origin[:2] - self.plan_mean) / self.plan_std

    def normalize_cubes(self, cubes) -> np.ndarray:
        out = np.array(cubes, dtype=np.float64)
        out[..., 1:] = (out[..., 1:] - self.weather_mean) / self.weather_std
        return out

    def to_json(self) -> dict:
        return {k: np.asarray(getattr(self, k)).tolist() for k in (
            "origin", "state_mean", "state_std", "plan_mean", "plan_std", "weather_mean", "weather_std")}

    @classmethod
    def from_json(cls, obj: dict) -> "Normalizer":
        return cls(**{k: np.asarray(v, dtype=float) for k, v in obj.items()})


def _weather_stats(cubes, missing):
    sums = np.zeros(3)
    sq = np.zeros(3)
    counts = np.zeros(3)
    for i, c in enumerate(cubes):
        c = np.asarray(c, dtype=np.float64)
        miss = np.zeros((c.shape[0], 4), bool) if missing is None else np.asarray(missing[i], bool)
        for ch in range(3):
            ok = ~miss[:, ch + 1]
            vals = c[ok, ..., ch + 1]
            sums[ch] += vals.sum()
            sq[ch] += np.square(vals).sum()
            counts[ch] += vals.size
    if np.any(counts == 0):
        return np.zeros(3), np.ones(3)
    mean = sums / counts
    var = np.maximum(sq / counts - mean ** 2, 0.0)
    std = np.sqrt(var)
    std[std == 0] = 1.0
    return mean, std


def normalize_flight(flight: Flight, normalizer: Normalizer) -> NormalizedFlight:
    states = track_states(flight.track)
    return NormalizedFlight(
        flight.id,
        normalizer.normalize_plan(flight.plan.waypoints),
        normalizer.normalize_states(states),
        flight.track[:, T].copy(),
    )


def denormalize_state(state, normalizer: Normalizer) -> np.ndarray:
    return normalizer.denormalize_states(state)
