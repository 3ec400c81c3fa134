import math

import numpy as np
import pytest

from trajcube.featurecube import (CONVECTIVE, TEMPERATURE, U_WIND, V_WIND, FeatureCubeGrid, GridParams,
                                  WeatherStore, assemble_cube, build_index, generate_grids, match_atmospheric,
                                  match_batch, match_convective, match_points, nearest_time)
from trajcube.geo import AltitudeTable, GeoRef, TrackPoint
from trajcube.preprocess import Normalizer


def _store(n_lon=12, n_lat=10, atm_times=(0.0, 3600.0), wx_times=(0.0, 1800.0, 3600.0), seed=0, u=None):
    r = np.random.default_rng(seed)
    geo = GeoRef.regular(-100, -89, 25, 34, n_lon, n_lat)
    atm = AltitudeTable.atmospheric([0, 10000, 20000, 30000, 40000])
    wxt = AltitudeTable.convective()
    shape = (len(atm_times), len(atm), geo.n)
    uu = r.normal(size=shape) if u is None else np.full(shape, u)
    return WeatherStore(geo, atm, wxt, atm_times, wx_times, uu, r.normal(size=shape), 220 + r.normal(size=shape),
                        (r.uniform(size=(len(wx_times), len(wxt), geo.n)) < 0.1).astype(np.uint8))


def test_grid_examples():
    g = generate_grids([TrackPoint(-95, 30, 30000, 0, course=0.0)], AltitudeTable.atmospheric(),
                       AltitudeTable.convective())[0]
    assert g.points.shape == (400, 2)
    np.testing.assert_allclose(g.points[0], (-95, 29), atol=1e-12)
    np.testing.assert_allclose(g.points[399], (-93, 31), atol=1e-12)
    g = generate_grids([TrackPoint(-95, 30, 30000, 0, course=math.pi / 2)], AltitudeTable.atmospheric(),
                       AltitudeTable.convective())[0]
    np.testing.assert_allclose(g.points[0], (-94, 30), atol=1e-12)


def test_grid_row_order():
    params = GridParams(2, 2, 5, 4)
    off = params.local_offsets()
    p, q = 2, 3
    assert off[p * params.nx + q] == pytest.approx((q * 2 / 4, -1 + p * 2 / 3))


def test_grid_batch_shapes_and_levels():
    pts = np.array([[-95, 30, 36000, 10, 0.3], [-94, 31, 22000, 20, 1.0], [-93, 32, 0, 30, -2.0]])
    grids = generate_grids(pts, AltitudeTable.atmospheric(), AltitudeTable.convective())
    assert len(grids) == 3 and all(g.points.shape == (400, 2) for g in grids)
    assert [AltitudeTable.convective().levels[g.wx_level] for g in grids] == [35000, 20000, 0]
    assert [g.t for g in grids] == [10, 20, 30]


def test_grid_requires_course():
    with pytest.raises(ValueError):
        generate_grids([TrackPoint(0, 0, 0, 0)], AltitudeTable.atmospheric(), AltitudeTable.convective())


def test_rotation_isometry(rng):
    base = generate_grids(np.array([[0, 0, 0, 0, 0.0]]), AltitudeTable.atmospheric(),
                          AltitudeTable.convective())[0].points
    d0 = np.linalg.norm(base[:, None] - base[None], axis=-1)
    for theta in rng.uniform(-math.pi, math.pi, 5):
        pts = generate_grids(np.array([[3, -2, 0, 0, theta]]), AltitudeTable.atmospheric(),
                             AltitudeTable.convective())[0].points
        np.testing.assert_allclose(np.linalg.norm(pts[:, None] - pts[None], axis=-1), d0, atol=1e-9)


def test_nearest_time_bound_and_ties():
    times = np.array([0.0, 21600.0])
    assert nearest_time(times, 3600, 3600).tolist() == [0]
    assert nearest_time(times, 10800, 1e9).tolist() == [0]  # tie -> earlier
    assert nearest_time(times, 30000, 3600).tolist() == [-1]


def test_uniform_field_and_missing():
    store = _store(u=7.0)
    index = build_index(store)
    grid = FeatureCubeGrid(np.tile([[-95.0, 30.0]], (400, 1)), 2, 3, 100.0)
    chans, missing = match_atmospheric(grid, store, index)
    assert not missing and np.all(chans[1] == 7.0)
    late = FeatureCubeGrid(grid.points, 2, 3, 3600 * 3.0)
    chans, missing = match_atmospheric(late, store, index)
    assert missing and np.all(chans == 0)


def _naive_match(grid, store, ab, tb):
    """Direct loops: nearest point, nearest time, OR over the altitude buffer."""
    pts = store.georef.points
    out = np.zeros((grid.points.shape[0], 4))
    ta = np.argmin(np.abs(store.atm_times - grid.t))
    tw = np.argmin(np.abs(store.wx_times - grid.t))
    levels = store.wx_table.as_array()
    z = levels[grid.wx_level]
    for k, p in enumerate(grid.points):
        d = (pts[:, 0] - p[0]) ** 2 + (pts[:, 1] - p[1]) ** 2
        s = int(np.flatnonzero(d == d.min())[0])
        if abs(store.wx_times[tw] - grid.t) <= tb:
            out[k, 0] = any(store.wx[tw, j, s] for j in range(len(levels)) if abs(levels[j] - z) <= ab)
        if abs(store.atm_times[ta] - grid.t) <= tb:
            out[k, 1:] = store.temp[ta, grid.atm_level, s], store.u[ta, grid.atm_level, s], \
                store.v[ta, grid.atm_level, s]
    return out


def test_match_against_naive_loops(rng):
    store = _store(seed=3)
    index = build_index(store)
    pts = np.column_stack([rng.uniform(-99, -92, 6), rng.uniform(26, 31, 6), rng.uniform(0, 45000, 6),
                           rng.uniform(0, 3600, 6), rng.uniform(-3, 3, 6)])
    cubes, missing = match_points(pts, store, index)
    grids = generate_grids(pts, store.atm_table, store.wx_table)
    for i, g in enumerate(grids):
        want = _naive_match(g, store, 20000, 3600)
        got = cubes[i].transpose(1, 0, 2).reshape(400, 4)
        np.testing.assert_array_equal(got.astype(np.float64), want.astype(np.float32).astype(np.float64))


def test_convective_or_and_buffer():
    store = _store(seed=1)
    store.wx[:] = 0
    index = build_index(store)
    params = GridParams(2, 2, 20, 20)
    pts = np.array([[-95.0, 30.0, 20000.0, 0.0, 0.0]])
    grid = generate_grids(pts, store.atm_table, store.wx_table, params)[0]
    sp = index.query_space(grid.points)
    # two in-buffer levels (20k and 29k), storms under two different cells
    k1, k2 = 5 * 20 + 3, 2 * 20 + 7
    store.wx[0, store.wx_table.levels.index(20000.0), sp[k1]] = 1
    store.wx[0, store.wx_table.levels.index(29000.0), sp[k2]] = 1
    out, missing = match_convective(grid, store, index)
    assert not missing
    hits = {(int(i), int(j)) for i, j in zip(*np.nonzero(out))}
    assert (3, 5) in hits and (7, 2) in hits
    for i, j in hits:
        assert sp[j * 20 + i] in (sp[k1], sp[k2])
    store.wx[:] = 0
    store.wx[0, store.wx_table.levels.index(45000.0), sp[k1]] = 1  # 25k ft above the grid level
    out, _ = match_convective(grid, store, index)
    assert out.sum() == 0


def test_assemble_cube_normalizes_and_zeroes_missing():
    store = _store(seed=2)
    index = build_index(store)
    norm = Normalizer(np.zeros(3), np.zeros(5), np.ones(5), np.zeros(2), np.ones(2),
                      np.array([220.0, 0.0, 0.0]), np.array([2.0, 3.0, 4.0]))
    grid = generate_grids(np.array([[-95.0, 30.0, 30000.0, 0.0, 0.5]]), store.atm_table, store.wx_table)[0]
    raw = assemble_cube(grid, store, index)
    cube = assemble_cube(grid, store, index, norm)
    assert cube.data.shape == (20, 20, 4)
    np.testing.assert_array_equal(cube.data[..., CONVECTIVE], raw.data[..., CONVECTIVE])
    assert set(np.unique(cube.data[..., CONVECTIVE])) <= {0.0, 1.0}
    np.testing.assert_allclose(cube.data[..., U_WIND], raw.data[..., U_WIND] / 3.0)
    np.testing.assert_allclose(cube.data[..., TEMPERATURE], (raw.data[..., TEMPERATURE] - 220) / 2)
    late = FeatureCubeGrid(grid.points, grid.atm_level, grid.wx_level, 1e6)
    cube = assemble_cube(late, store, index, norm)
    assert all(cube.missing) and not cube.data.any()


def test_store_roundtrip(tmp_path):
    store = _store(seed=4)
    store.save(tmp_path / "s")
    back = WeatherStore.load(tmp_path / "s")
    for name in ("u", "v", "temp", "wx", "atm_times", "wx_times"):
        np.testing.assert_array_equal(getattr(back, name), getattr(store, name))
    assert back.atm_table == store.atm_table
    (tmp_path / "s" / "u.bin").write_bytes(b"\0" * 8)
    with pytest.raises(ValueError, match="payload"):
        WeatherStore.load(tmp_path / "s")


def test_store_validation():
    with pytest.raises(ValueError):
        _store(atm_times=(3600.0, 0.0))
    store = _store()
    with pytest.raises(ValueError):
        WeatherStore(store.georef, store.atm_table, store.wx_table, store.atm_times, store.wx_times,
                     store.u, store.v, store.temp, store.wx * 2)


def test_batch_equals_single(rng):
    store = _store(seed=5)
    index = build_index(store)
    pts = np.column_stack([rng.uniform(-99, -92, 8), rng.uniform(26, 31, 8), rng.uniform(0, 45000, 8),
                           rng.uniform(0, 3600, 8), rng.uniform(-3, 3, 8)])
    batch, bmiss = match_points(pts, store, index)
    for i in range(8):
        one, miss = match_points(pts[i:i + 1], store, index)
        assert one.tobytes() == batch[i:i + 1].tobytes()
        assert (miss == bmiss[i:i + 1]).all()
