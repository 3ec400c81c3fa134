"""Static 2-d tree for exact nearest-neighbor lookup over grid points.

Distances are flat Euclidean in (lon, lat).  Ties resolve to the smallest
point index, so results match :class:`BruteForceIndex` exactly.
"""
from __future__ import annotations

import numpy as np
from numba import njit

_STACK_DEPTH = 128


class KDTree:
    """Median-split 2-d tree with array storage.

    Parameters
    ----------
    points : array_like, shape (n, 2)
    leafsize : int
        Maximum number of points stored in a leaf.
    """

    def __init__(self, points, leafsize: int = 16):
        pts = np.ascontiguousarray(points, dtype=np.float64)
        if pts.ndim != 2 or pts.shape[1] != 2:
            raise ValueError("points must have shape (n, 2)")
        if pts.shape[0] == 0:
            raise ValueError("cannot index an empty point set")
        self.points = pts
        self.n = pts.shape[0]
        self.leafsize = max(1, int(leafsize))
        self._build()

    def _build(self):
        pts = self.points
        perm = np.arange(self.n, dtype=np.int64)
        start, end, split_dim, split_val, left, right = [], [], [], [], [], []

        def new_node(lo, hi):
            start.append(lo)
            end.append(hi)
            split_dim.append(-1)
            split_val.append(0.0)
            left.append(-1)
            right.append(-1)
            return len(start) - 1

        root = new_node(0, self.n)
        todo = [root]
        while todo:
            node = todo.pop()
            lo, hi = start[node], end[node]
            if hi - lo <= self.leafsize:
                continue
            sub = perm[lo:hi]
            spread = pts[sub].max(axis=0) - pts[sub].min(axis=0)
            dim = int(np.argmax(spread))
            if spread[dim] == 0.0:
                continue
            mid = (hi - lo) // 2
            order = np.argpartition(pts[sub, dim], mid, kind="introselect")
            perm[lo:hi] = sub[order]
            split_dim[node] = dim
            split_val[node] = pts[perm[lo + mid], dim]
            l_node = new_node(lo, lo + mid)
            r_node = new_node(lo + mid, hi)
            left[node], right[node] = l_node, r_node
            todo.extend((r_node, l_node))

        self._perm = perm
        self._sorted = np.ascontiguousarray(pts[perm])
        self._start = np.asarray(start, dtype=np.int64)
        self._end = np.asarray(end, dtype=np.int64)
        self._dim = np.asarray(split_dim, dtype=np.int64)
        self._val = np.asarray(split_val, dtype=np.float64)
        self._left = np.asarray(left, dtype=np.int64)
        self._right = np.asarray(right, dtype=np.int64)

    def query(self, queries):
        """Nearest point index and squared distance for each query row."""
        q = np.ascontiguousarray(np.atleast_2d(queries), dtype=np.float64)
        if q.shape[-1] != 2:
            raise ValueError("queries must have shape (m, 2)")
        return _query_all(q, self._sorted, self._perm, self._start, self._end,
                          self._dim, self._val, self._left, self._right)


class BruteForceIndex:
    """Exhaustive nearest-neighbor scan with the same interface as :class:`KDTree`."""

    def __init__(self, points, chunk: int = 256):
        pts = np.ascontiguousarray(points, dtype=np.float64)
        if pts.ndim != 2 or pts.shape[1] != 2 or pts.shape[0] == 0:
            raise ValueError("points must be a non-empty (n, 2) array")
        self.points = pts
        self.n = pts.shape[0]
        self.chunk = chunk

    def query(self, queries):
        q = np.atleast_2d(np.asarray(queries, dtype=np.float64))
        idx = np.empty(q.shape[0], dtype=np.int64)
        d2 = np.empty(q.shape[0])
        px, py = self.points[:, 0], self.points[:, 1]
        for lo in range(0, q.shape[0], self.chunk):
            qq = q[lo:lo + self.chunk]
            dx = qq[:, 0:1] - px[None, :]
            dy = qq[:, 1:2] - py[None, :]
            dist = dx * dx + dy * dy
            best = np.argmin(dist, axis=1)
            idx[lo:lo + self.chunk] = best
            d2[lo:lo + self.chunk] = dist[np.arange(len(best)), best]
        return idx, d2


@njit(cache=True)
def _query_all(q, pts, perm, start, end, dim, val, left, right):
    m = q.shape[0]
    out_idx = np.empty(m, dtype=np.int64)
    out_d2 = np.empty(m, dtype=np.float64)
    stack = np.empty(_STACK_DEPTH, dtype=np.int64)
    bound = np.empty(_STACK_DEPTH, dtype=np.float64)
    for j in range(m):
        qx = q[j, 0]
        qy = q[j, 1]
        best = np.inf
        best_i = -1
        stack[0] = 0
        bound[0] = 0.0
        top = 1
        while top > 0:
            top -= 1
            node = stack[top]
            # <= keeps equidistant points with a smaller index reachable
            if bound[top] > best:
                continue
            d = dim[node]
            if d < 0:
                for k in range(start[node], end[node]):
                    dx = qx - pts[k, 0]
                    dy = qy - pts[k, 1]
                    d2 = dx * dx + dy * dy
                    pi = perm[k]
                    if d2 < best or (d2 == best and pi < best_i):
                        best = d2
                        best_i = pi
                continue
            qd = qx if d == 0 else qy
            diff = qd - val[node]
            if diff < 0:
                near = left[node]
                far = right[node]
            else:
                near = right[node]
                far = left[node]
            stack[top] = far
            bound[top] = diff * diff
            top += 1
            stack[top] = near
            bound[top] = 0.0
            top += 1
        out_idx[j] = best_i
        out_d2[j] = best
    return out_idx, out_d2
