"""Farthest point sampling and exact k-nearest-neighbour search.

Both are deterministic functions of point *coordinates*: ties are broken by
lexicographic (x, y, z) order before falling back to storage index, so the
selected geometry does not depend on how the points are stored.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from .cloud import PointCloud

COINCIDENT_TOL = 1e-12


@dataclass(frozen=True, eq=False)
class Neighborhood:
    """A reference point and its distance-sorted neighbours, resolved against a parent cloud."""

    reference_index: int
    neighbor_indices: np.ndarray
    points: np.ndarray
    normals: np.ndarray | None = None

    @property
    def k(self) -> int:
        return len(self.neighbor_indices)

    @property
    def reference(self) -> np.ndarray:
        return self.points[self.reference_index]

    @property
    def reference_normal(self) -> np.ndarray:
        return self.normals[self.reference_index]

    @property
    def neighbors(self) -> np.ndarray:
        return self.points[self.neighbor_indices]

    @property
    def neighbor_normals(self) -> np.ndarray:
        return self.normals[self.neighbor_indices]

    @classmethod
    def from_arrays(cls, reference, neighbors, reference_normal=None, neighbor_normals=None):
        """Standalone neighbourhood: reference at index 0, neighbours 1..K in the given order."""
        pts = np.vstack([np.asarray(reference, float)[None], np.asarray(neighbors, float)])
        nrm = None
        if reference_normal is not None:
            nrm = np.vstack([np.asarray(reference_normal, float)[None], np.asarray(neighbor_normals, float)])
        return cls(0, np.arange(1, len(pts)), pts, nrm)


def _as_points(cloud) -> np.ndarray:
    return cloud.points if isinstance(cloud, PointCloud) else np.asarray(cloud, dtype=np.float64)


def _lexmax(values: np.ndarray, candidates: np.ndarray, pts: np.ndarray) -> int:
    """Index among ``candidates`` with maximal value; ties -> smallest (x, y, z), then index."""
    best = candidates[values[candidates] == values[candidates].max()]
    if len(best) == 1:
        return int(best[0])
    sub = pts[best]
    order = np.lexsort((best, sub[:, 2], sub[:, 1], sub[:, 0]))
    return int(best[order[0]])


def _sqdist(xs, ys, zs, q, out, tmp):
    np.subtract(xs, q[0], out=out)
    np.multiply(out, out, out=out)
    np.subtract(ys, q[1], out=tmp)
    np.multiply(tmp, tmp, out=tmp)
    out += tmp
    np.subtract(zs, q[2], out=tmp)
    np.multiply(tmp, tmp, out=tmp)
    out += tmp


def farthest_point_sample(cloud, m: int, seed: int | None = None) -> np.ndarray:
    """Pick ``m`` indices by iterated max-min distance.

    The first pick is the point farthest from the centroid unless ``seed`` is given,
    in which case it is drawn at random from ``numpy.random.default_rng(seed)``.
    """
    pts = _as_points(cloud)
    n = len(pts)
    if not 1 <= m <= n:
        raise ValueError(f"cannot sample {m} points from a cloud of {n}")
    all_idx = np.arange(n)
    if seed is None:
        d0 = ((pts - pts.mean(axis=0)) ** 2).sum(axis=1)
        first = _lexmax(d0, all_idx, pts)
    else:
        first = int(np.random.default_rng(seed).integers(n))
    picked = np.empty(m, dtype=np.int64)
    picked[0] = first
    xs, ys, zs = (np.ascontiguousarray(pts[:, i]) for i in range(3))
    mind = np.empty(n)
    tmp = np.empty(n)
    _sqdist(xs, ys, zs, pts[first], mind, tmp)
    mind[first] = -1.0
    d = np.empty(n)
    for j in range(1, m):
        nxt = int(mind.argmax())
        top = mind[nxt]
        if np.count_nonzero(mind == top) > 1:
            nxt = _lexmax(mind, np.flatnonzero(mind == top), pts)
        picked[j] = nxt
        _sqdist(xs, ys, zs, pts[nxt], d, tmp)
        np.minimum(mind, d, out=mind)
        mind[nxt] = -1.0
    return picked


def _order_rows(d2: np.ndarray, cand: np.ndarray, pts: np.ndarray) -> np.ndarray:
    """Sort candidate rows by (distance, x, y, z, index)."""
    c = pts[cand]
    keys = (cand, c[..., 2], c[..., 1], c[..., 0], d2)
    # lexsort works on the last axis of each key
    return np.lexsort(keys, axis=-1)


def knn_indices(points, query_indices, k: int, tree: cKDTree | None = None) -> np.ndarray:
    """(len(query_indices), k) neighbour index array; see :func:`knn`."""
    pts = _as_points(points)
    n = len(pts)
    q = np.asarray(query_indices, dtype=np.int64).reshape(-1)
    if k < 1 or k >= n:
        raise ValueError(f"k={k} must satisfy 1 <= k < number of points ({n})")
    if len(q) == 0:
        return np.zeros((0, k), dtype=np.int64)
    tree = cKDTree(pts) if tree is None else tree
    out = np.empty((len(q), k), dtype=np.int64)
    todo = np.arange(len(q))
    fetch = min(n, k + 3)
    while len(todo):
        _, cand = tree.query(pts[q[todo]], k=fetch)
        cand = cand.reshape(len(todo), fetch)
        # exact squared distances, same arithmetic for every pair
        d2 = ((pts[cand] - pts[q[todo]][:, None, :]) ** 2).sum(axis=2)
        coincident = d2 <= COINCIDENT_TOL**2
        d2 = np.where(coincident, np.inf, d2)
        order = _order_rows(d2, cand, pts)
        cand = np.take_along_axis(cand, order, axis=1)
        d2 = np.take_along_axis(d2, order, axis=1)
        usable = np.isfinite(d2)
        n_usable = usable.sum(axis=1)
        if fetch == n:
            if np.any(n_usable < k):
                raise ValueError("not enough distinct points for the requested k")
            ok = np.ones(len(todo), dtype=bool)
        else:
            # complete when the kth usable distance is strictly below the farthest fetched one
            kth = np.where(n_usable >= k, d2[np.arange(len(todo)), np.minimum(k, fetch) - 1], np.inf)
            far = ((pts[cand] - pts[q[todo]][:, None, :]) ** 2).sum(axis=2).max(axis=1)
            ok = (n_usable >= k) & (kth < far * (1.0 - 1e-9))
        out[todo[ok]] = cand[ok, :k]
        todo = todo[~ok]
        fetch = min(n, fetch * 2)
    return out


def knn(cloud, query_indices, k: int) -> list[Neighborhood]:
    """Exact k nearest neighbours of each query point, excluding the query itself.

    Neighbours are sorted by Euclidean distance with ties broken by (x, y, z) and
    then by index. Points within 1e-12 of the query are skipped.
    """
    pts = _as_points(cloud)
    normals = cloud.normals if isinstance(cloud, PointCloud) else None
    q = np.asarray(query_indices, dtype=np.int64).reshape(-1)
    idx = knn_indices(pts, q, k)
    return [Neighborhood(int(r), row, pts, normals) for r, row in zip(q, idx)]


def knn_bruteforce(cloud, query_indices, k: int) -> np.ndarray:
    """All-pairs reference implementation of :func:`knn_indices`."""
    pts = _as_points(cloud)
    rows = []
    for r in np.asarray(query_indices).reshape(-1):
        d2 = ((pts - pts[r]) ** 2).sum(axis=1)
        keep = np.flatnonzero(d2 > COINCIDENT_TOL**2)
        order = np.lexsort((keep, pts[keep, 2], pts[keep, 1], pts[keep, 0], d2[keep]))
        rows.append(keep[order[:k]])
    return np.array(rows, dtype=np.int64)
