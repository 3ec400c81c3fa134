"""Glue between stores, flights, the network and the trajectory generator."""
from __future__ import annotations

import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, List, Optional, Sequence

import numpy as np

from .featurecube import GridParams, MatchIndex, WeatherStore, match_flight, match_points
from .inference import KalmanConfig, NetworkPredictor, Prediction, generate_trajectory, plan_follow_baseline
from .mdnrnn.network import FlightSample
from .preprocess import (COURSE, STATE_COLUMNS, T, Flight, Normalizer, derive_kinematics,
                         partition_flight_plan)


@dataclass
class MatchedFlight:
    flight: Flight
    kinematics: np.ndarray  # (T, 7)
    cubes: np.ndarray  # raw float32 (T, nx, ny, 4)
    missing: np.ndarray  # (T, 4)


def ordered_map(fn: Callable, items: Sequence, threads: int = 1) -> list:
    """``map`` with an optional thread pool; output order always follows input order."""
    if threads <= 1 or len(items) < 2:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, items))


def prepare_cubes(cubes, missing, normalizer: Optional[Normalizer]) -> np.ndarray:
    """Normalize raw cubes and zero every channel flagged missing."""
    out = normalizer.normalize_cubes(cubes) if normalizer is not None else np.array(cubes, dtype=np.float64)
    miss = np.asarray(missing, dtype=bool)
    out[..., 1:] = np.where(miss[:, None, None, 1:], 0.0, out[..., 1:])
    out[..., 0] = np.where(miss[:, None, None, 0], 0.0, out[..., 0])
    return out


def match_corpus(flights: Sequence[Flight], store: WeatherStore, index: MatchIndex,
                 grid: GridParams = GridParams(), ab: float = 20000.0, tb: float = 3600.0,
                 threads: int = 1) -> List[MatchedFlight]:
    def one(f: Flight) -> MatchedFlight:
        kin = derive_kinematics(f.track)
        cubes, missing = match_flight(kin, store, index, grid, ab, tb)
        return MatchedFlight(f, kin, cubes, missing)

    return ordered_map(one, list(flights), threads)


def fit_normalizer(train: Sequence[MatchedFlight]) -> Normalizer:
    return Normalizer.fit([m.flight for m in train], cubes=[m.cubes for m in train],
                          cube_missing=[m.missing for m in train])


def step_map(normalizer: Normalizer, A) -> tuple:
    """Affine map taking normalized states through ``x -> A x`` in physical units.

    Returned flat (25 matrix entries, 5 offsets) as ``ModelConfig.residual_map``.
    """
    scale = normalizer.state_std
    shift = normalizer.state_mean + normalizer.state_offset
    A = np.asarray(A, dtype=np.float64)
    M = A * scale[None, :] / scale[:, None]
    b = (A @ shift - shift) / scale
    return tuple(float(v) for v in np.concatenate([M.ravel(), b]))


def build_samples(matched: Sequence[MatchedFlight], normalizer: Normalizer,
                  plan_alpha: float = 1.0) -> List[FlightSample]:
    out = []
    for m in matched:
        plan = partition_flight_plan(m.flight.plan, plan_alpha).waypoints
        out.append(FlightSample(
            normalizer.normalize_plan(plan),
            normalizer.normalize_states(m.kinematics[:, STATE_COLUMNS]),
            prepare_cubes(m.cubes, m.missing, normalizer),
        ))
    return out


def observed_kinematics(flight: Flight, warmup: int) -> np.ndarray:
    """Kinematics of the warm-up window computed from observed points only."""
    return derive_kinematics(flight.track[:warmup])


def predict_flight(predictor: NetworkPredictor, normalizer: Normalizer, flight: Flight,
                   store: WeatherStore, index: MatchIndex, warmup: int = 20,
                   kalman: KalmanConfig = KalmanConfig(), grid: GridParams = GridParams(),
                   ab: float = 20000.0, tb: float = 3600.0, plan_alpha: float = 1.0,
                   horizon: Optional[int] = None) -> Prediction:
    """Predict track points ``warmup..horizon-1`` of ``flight`` (horizon defaults to its length)."""
    n = flight.track.shape[0] if horizon is None else horizon
    if warmup < 2:
        raise ValueError("warm-up needs at least 2 points to derive speeds")
    if warmup >= n:
        raise ValueError(f"warm-up length {warmup} must be shorter than the flight ({n} points)")
    kin = observed_kinematics(flight, warmup)
    cubes, missing = match_flight(kin, store, index, grid, ab, tb)
    obs_cubes = prepare_cubes(cubes, missing, normalizer)
    plan = normalizer.normalize_plan(partition_flight_plan(flight.plan, plan_alpha).waypoints)

    def cube_fn(states, t, course):
        rows = np.column_stack([states[:, :3], np.full(len(states), t), course])
        c, miss = match_points(rows, store, index, grid, ab, tb)
        return prepare_cubes(c, miss, normalizer)

    return generate_trajectory(predictor, normalizer, plan, kin[:, STATE_COLUMNS], obs_cubes, n, cube_fn,
                               kalman, t_last=float(kin[-1, T]), course_last=float(kin[-1, COURSE]))


def baseline_prediction(flight: Flight, warmup: int = 20) -> np.ndarray:
    """Plan-following constant-speed positions for track points ``warmup..``.

    Ground speed is taken from the last observed segment.
    """
    tr = flight.track
    return plan_follow_baseline(flight.plan.waypoints, tr[warmup - 2:warmup], tr[warmup:, T])


# -- matched cube files -----------------------------------------------------------

CUBES_FORMAT = "trajcube-cubes/1"


def save_matched(directory, matched: Sequence[MatchedFlight], grid: GridParams) -> None:
    """Write cubes (<f4), missing flags (u1) and kinematics (<f8) with a manifest."""
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    entries = []
    offset = 0
    with open(d / "cubes.bin", "wb") as fc, open(d / "missing.bin", "wb") as fm, \
            open(d / "kinematics.bin", "wb") as fk:
        for m in matched:
            n = m.cubes.shape[0]
            fc.write(np.ascontiguousarray(m.cubes, dtype="<f4").tobytes())
            fm.write(np.ascontiguousarray(m.missing, dtype="u1").tobytes())
            fk.write(np.ascontiguousarray(m.kinematics, dtype="<f8").tobytes())
            entries.append({"id": m.flight.id, "offset": offset, "rows": n})
            offset += n
    manifest = {
        "format": CUBES_FORMAT,
        "grid": {"dx": grid.dx, "dy": grid.dy, "nx": grid.nx, "ny": grid.ny},
        "channels": ["convective", "temperature", "u_wind", "v_wind"],
        "layout": "[row][x][y][channel]",
        "rows": offset,
        "flights": entries,
    }
    (d / "manifest.json").write_text(json.dumps(manifest, indent=1))


def load_matched(directory):
    """Returns ``(entries, cubes, missing, kinematics, grid)`` with rows indexed by each entry's offset."""
    d = Path(directory)
    path = d / "manifest.json"
    if not path.exists():
        raise ValueError(f"no cube manifest at {path}")
    m = json.loads(path.read_text())
    if m.get("format") != CUBES_FORMAT:
        raise ValueError(f"{path}: unsupported cube format {m.get('format')!r}")
    g = m["grid"]
    grid = GridParams(g["dx"], g["dy"], g["nx"], g["ny"])
    rows = int(m["rows"])
    cubes = np.fromfile(d / "cubes.bin", dtype="<f4")
    missing = np.fromfile(d / "missing.bin", dtype="u1")
    kin = np.fromfile(d / "kinematics.bin", dtype="<f8")
    if cubes.size != rows * grid.nx * grid.ny * 4 or missing.size != rows * 4 or kin.size != rows * 7:
        raise ValueError(f"{d}: payload sizes do not match the manifest")
    return (m["flights"], cubes.reshape(rows, grid.nx, grid.ny, 4), missing.reshape(rows, 4).astype(bool),
            kin.reshape(rows, 7), grid)


# -- prediction records -------------------------------------------------------------

def prediction_record(flight: Flight, pred: Prediction, warmup: int) -> dict:
    """JSON-lines record: the flight format plus uncertainty bands and scores."""
    track = np.column_stack([pred.states[:, :3], pred.times])
    return {
        "id": flight.id,
        "plan": np.asarray(flight.plan.waypoints).tolist(),
        "track": track.tolist(),
        "start_index": int(warmup),
        "sigma3_horizontal_nm": pred.sigma3_horizontal_nm().tolist(),
        "sigma3_vertical_ft": pred.sigma3_vertical_ft().tolist(),
        "loglik": pred.loglik.tolist(),
        "outlier": pred.outliers.astype(int).tolist(),
    }


def read_records(path) -> List[dict]:
    """Flight or prediction JSON-lines records; ``start_index`` defaults to 0."""
    out = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
                rec["track"] = np.asarray(rec["track"], dtype=float)
                if rec["track"].ndim != 2 or rec["track"].shape[1] < 4:
                    raise ValueError("track rows must be [lon, lat, alt, t]")
                rec.setdefault("start_index", 0)
                rec["id"] = str(rec["id"])
            except (json.JSONDecodeError, KeyError, ValueError) as exc:
                raise ValueError(f"{path}:{lineno}: bad record ({exc})") from None
            out.append(rec)
    return out


def geojson_feature(rec: dict) -> dict:
    tr = np.asarray(rec["track"])
    return {
        "type": "Feature",
        "properties": {"id": rec["id"], "start_index": rec.get("start_index", 0),
                       "t": tr[:, 3].tolist(), "sigma3_horizontal_nm": rec.get("sigma3_horizontal_nm")},
        "geometry": {"type": "LineString", "coordinates": tr[:, :3].tolist()},
    }
