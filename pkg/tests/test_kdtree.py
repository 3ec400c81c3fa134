import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from trajcube.kdtree import BruteForceIndex, KDTree


def test_four_point_grid():
    pts = np.array([[0, 0], [1, 0], [0, 1], [1, 1]], dtype=float)
    tree = KDTree(pts)
    idx, d2 = tree.query(np.array([[0.4, 0.4], [1, 1]]))
    assert idx.tolist() == [0, 3]
    assert d2[1] == 0


def test_ties_resolve_to_smallest_index():
    pts = np.array([[1, 0], [-1, 0], [0, 1], [0, -1]], dtype=float)
    idx, _ = KDTree(pts, leafsize=1).query(np.zeros((1, 2)))
    assert idx[0] == 0
    dup = np.array([[5, 5], [0, 0], [0, 0], [0, 0]], dtype=float)
    assert KDTree(dup, leafsize=1).query(np.array([[0.1, 0.0]]))[0][0] == 1


@pytest.mark.parametrize("leafsize", [1, 4, 16])
def test_lattice_matches_brute_force(rng, leafsize):
    lon, lat = np.meshgrid(np.arange(40) * 0.25, np.arange(30) * 0.25)
    pts = np.column_stack([lon.ravel(), lat.ravel()])
    # queries on half-cell lines produce many exact ties
    q = np.round(rng.uniform(-1, 11, (3000, 2)) * 8) / 8
    a = KDTree(pts, leafsize).query(q)
    b = BruteForceIndex(pts).query(q)
    np.testing.assert_array_equal(a[0], b[0])
    np.testing.assert_array_equal(a[1], b[1])


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 300), st.integers(0, 2**31 - 1))
def test_random_sets_match_brute_force(n, seed):
    r = np.random.default_rng(seed)
    pts = np.round(r.uniform(-3, 3, (n, 2)), 1)
    q = np.round(r.uniform(-4, 4, (200, 2)), 2)
    np.testing.assert_array_equal(KDTree(pts, 3).query(q)[0], BruteForceIndex(pts).query(q)[0])


def test_rejects_bad_input():
    with pytest.raises(ValueError):
        KDTree(np.zeros((0, 2)))
    with pytest.raises(ValueError):
        KDTree(np.zeros((3, 3)))
