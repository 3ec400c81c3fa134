import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from trajcube.geo import (AltitudeTable, GeoRef, TrackPoint, WX_LEVELS_FT, course_between, haversine_nm,
                          isobaric_levels_ft, nearest_level)

lon = st.floats(-180, 180, allow_nan=False)
lat = st.floats(-89, 89, allow_nan=False)


def test_nearest_level_examples():
    table = AltitudeTable.convective()
    assert table.levels[nearest_level(36000, table)] == 35000
    assert nearest_level(0, table) == 0
    # 22k is equidistant from 20k and 24k; the lower level wins
    assert table.levels[nearest_level(22000, table)] == 20000


def test_nearest_level_idempotent():
    for table in (AltitudeTable.convective(), AltitudeTable.atmospheric()):
        for i, level in enumerate(table.levels):
            assert nearest_level(level, table) == i


def test_convective_table_default():
    assert AltitudeTable.convective().levels == tuple(v * 1000.0 for v in
                                                      (0, 14, 20, 24, 29, 35, 39, 45, 50, 54, 60, 65, 69))
    assert WX_LEVELS_FT[-1] == 69000


def test_isobaric_levels_ascending():
    levels = isobaric_levels_ft()
    assert len(levels) == 39
    assert all(b > a for a, b in zip(levels, levels[1:]))


def test_table_rejects_unsorted():
    with pytest.raises(ValueError):
        AltitudeTable((0, 10, 10))


def test_haversine_examples():
    assert haversine_nm((3.0, 4.0), (3.0, 4.0)) == 0
    assert haversine_nm((0, 0), (0, 1)) == pytest.approx(60.0, abs=0.05)


@settings(max_examples=100, deadline=None)
@given(lon, lat, lon, lat)
def test_haversine_symmetric(a0, a1, b0, b1):
    assert haversine_nm((a0, a1), (b0, b1)) == haversine_nm((b0, b1), (a0, a1))


@settings(max_examples=200, deadline=None)
@given(lon, lat, lon, lat, lon, lat)
def test_haversine_triangle(a0, a1, b0, b1, c0, c1):
    ab = haversine_nm((a0, a1), (b0, b1))
    bc = haversine_nm((b0, b1), (c0, c1))
    ac = haversine_nm((a0, a1), (c0, c1))
    assert ac <= (ab + bc) * (1 + 1e-9) + 1e-9


def test_course_cardinal_directions():
    assert course_between((0, 0), (1, 0)) == 0
    assert course_between((0, 0), (0, 1)) == pytest.approx(math.pi / 2)
    assert course_between((0, 0), (-1, 0)) == pytest.approx(math.pi)
    with pytest.raises(ValueError, match="degenerate segment"):
        course_between((1, 1), (1, 1))


@given(st.floats(-5, 5), st.floats(-5, 5), st.floats(0.01, 100))
def test_course_scale_invariant(dx, dy, k):
    if abs(dx) < 1e-3 and abs(dy) < 1e-3:
        return
    assert course_between((0, 0), (dx, dy)) == pytest.approx(course_between((0, 0), (k * dx, k * dy)), abs=1e-12)


def test_georef_validation():
    g = GeoRef.regular(-1, 1, 0, 1, 3, 2)
    assert g.n == 6
    assert tuple(g.points[1]) == (0.0, 0.0)
    with pytest.raises(ValueError):
        GeoRef(np.array([[200.0, 0.0]]))
    with pytest.raises(ValueError):
        g.points[0, 0] = 5


def test_trackpoint_invariants():
    TrackPoint(0, 0, 0, 0, course=math.pi)
    with pytest.raises(ValueError):
        TrackPoint(0, 0, -1, 0)
    with pytest.raises(ValueError):
        TrackPoint(0, 0, 0, -1)
    with pytest.raises(ValueError):
        TrackPoint(0, 0, 0, 0, course=4.0)
