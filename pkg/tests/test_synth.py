import dataclasses

import numpy as np
import pytest

from trajcube.geo import haversine_nm
from trajcube.synth import SynthConfig, World, convective_fraction, gen_flight, gen_flights, gen_weather, split_corpus

SMALL = SynthConfig(n_flights=6, seed=3)


@pytest.fixture(scope="module")
def world():
    return World.from_config(SMALL)


@pytest.fixture(scope="module")
def flights(world):
    return gen_flights(SMALL, world)


def test_flights_deterministic(world, flights):
    again = gen_flights(SMALL, World.from_config(SMALL))
    assert [f.id for f in again] == [f.id for f in flights]
    for a, b in zip(again, flights):
        assert a.track.tobytes() == b.track.tobytes()
        assert np.array_equal(a.plan.waypoints, b.plan.waypoints)


def test_one_flight_independent_of_corpus(world, flights):
    f = gen_flight(SMALL, world, 2)
    assert f.track.tobytes() == next(x for x in flights if x.id == f.id).track.tobytes()


def test_flights_connect_airports(flights):
    assert len(flights) >= 5
    for f in flights:
        assert haversine_nm(f.track[0, :2], SMALL.origin) < 15
        assert haversine_nm(f.track[-1, :2], SMALL.destination) < 15
        dt = np.diff(f.track[:, 3])
        assert np.allclose(dt[:-1], 120.0) and 0 < dt[-1] <= 120.0  # arrival point is kept
        assert f.track[:, 2].max() <= max(SMALL.cruise_levels) + 1
        assert np.array_equal(f.plan.waypoints[0], SMALL.origin)


def test_weather_store(world):
    cfg = SynthConfig(seed=3, duration=8 * 3600.0, departure_window=2 * 3600.0)
    st = gen_weather(cfg, World.from_config(cfg))
    assert st.u.shape[0] == len(st.atm_times) and st.wx.shape[0] == len(st.wx_times)
    assert np.all(np.isfinite(st.u)) and np.all(np.isfinite(st.temp))
    assert 0.02 < convective_fraction(st) < 0.09
    assert set(np.unique(st.wx)) <= {0, 1}


CALM = dict(jet_speed=0.0, wind_amplitude=0.0)


def _cross_track_deg(track, wp):
    out = []
    for p in track[:, :2]:
        d = []
        for a, b in zip(wp[:-1], wp[1:]):
            u = np.clip(np.dot(p - a, b - a) / np.dot(b - a, b - a), 0, 1)
            d.append(np.hypot(*(p - (a + u * (b - a)))))
        out.append(min(d))
    return np.array(out)


def test_zero_wind_field():
    w = World.from_config(SynthConfig(**CALM))
    u, v = w.wind(np.linspace(-99, -80, 7), np.linspace(27, 39, 7), 35000.0, 3600.0)
    assert not u.any() and not v.any()


def test_calm_without_avoidance_overlays_plan():
    cfg = SynthConfig(n_flights=3, seed=5, avoidance_gain=0.0, **CALM)
    w = World.from_config(cfg)
    for i in range(3):
        f = gen_flight(cfg, w, i)
        assert _cross_track_deg(f.track, f.plan.waypoints).max() < 1e-6


def test_wind_drifts_the_track():
    cfg = SynthConfig(n_flights=1, seed=5, avoidance_gain=0.0, storm_cells=0)
    f = gen_flight(cfg, World.from_config(cfg), 0)
    assert _cross_track_deg(f.track, f.plan.waypoints).max() > 1e-3


def test_cell_on_corridor_forces_detour():
    cfg = SynthConfig(n_flights=1, seed=5, storm_cells=1, **CALM)
    w = World.from_config(cfg)
    calm = gen_flight(SynthConfig(n_flights=1, seed=5, avoidance_gain=0.0, storm_cells=1, **CALM), w, 0)
    mid = calm.track[len(calm) // 2, :2]
    radius = 0.4
    cell = np.array([[mid[0], mid[1], 0.0, 0.0, 50000.0]])
    w = dataclasses.replace(w, cells=cell, radius=radius)
    f = gen_flight(cfg, w, 0)
    assert _cross_track_deg(f.track, f.plan.waypoints).max() > radius / 2


def test_split(flights):
    tr, te = split_corpus(flights, 0.5, seed=1)
    assert len(tr) == 3 and len(te) == 3
    assert not {f.id for f in tr} & {f.id for f in te}
    tr2, _ = split_corpus(flights, 0.5, seed=1)
    assert [f.id for f in tr] == [f.id for f in tr2]


@pytest.mark.parametrize("kw", [{"storm_coverage": 1.5}, {"plan_adherence": 2.0}, {"lon_range": (5, 1)},
                                {"train_fraction": 1.0}])
def test_config_validation(kw):
    with pytest.raises(ValueError):
        SynthConfig(**kw)
