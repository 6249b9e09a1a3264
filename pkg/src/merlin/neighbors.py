"""Exact Euclidean k-nearest-neighbour search with a median-split ball tree."""
from __future__ import annotations

from typing import Callable

import numpy as np

from . import _fallback
from ._kernels import knn_query
from ._fallback import row_distances


class BallTree:
    """Immutable ball tree over a point set.

    Nodes are stored as flat arrays. A node owns ``order[start:end]``; internal
    nodes split their points at the median of the coordinate with the widest
    spread (ties in that coordinate fall back to point index), leaves hold at
    most ``leaf_size`` points. Each point also carries an id, by default
    ``(0, i)``; trees built from a dataset use ``(trajectory, step)``.
    """

    def __init__(self, points, ids=None, leaf_size: int = 32):
        pts = np.ascontiguousarray(points, dtype=np.float64)
        if pts.ndim != 2 or pts.shape[0] == 0:
            raise ValueError("ball tree needs a non-empty (n, d) point array")
        if leaf_size < 1:
            raise ValueError("leaf_size must be >= 1")
        self.points = pts
        n = pts.shape[0]
        self.ids = (np.stack([np.zeros(n, dtype=np.int64), np.arange(n)], axis=1)
                    if ids is None else np.asarray(ids, dtype=np.int64))
        if self.ids.shape != (n, 2):
            raise ValueError("ids must be an (n, 2) array of (trajectory, step)")
        self.leaf_size = int(leaf_size)
        self._build()

    @classmethod
    def from_dataset(cls, dataset, leaf_size: int = 32) -> "BallTree":
        if dataset.n_states == 0:
            raise ValueError("cannot build a ball tree over an empty dataset")
        flat = dataset.flat
        ids = np.stack([flat.state_traj, flat.state_step], axis=1)
        tree = cls(flat.states, ids, leaf_size)
        tree.n_trajectories = len(dataset)
        return tree

    def _build(self) -> None:
        pts, leaf = self.points, self.leaf_size
        order = np.arange(pts.shape[0], dtype=np.intp)
        start, end, left, right, cent, rad = [], [], [], [], [], []

        def make(lo: int, hi: int) -> int:
            node = len(start)
            sub = pts[order[lo:hi]]
            # identical points must give an exactly zero radius
            c = sub[0].copy() if np.all(sub == sub[0]) else sub.mean(axis=0)
            start.append(lo)
            end.append(hi)
            cent.append(c)
            rad.append(float(row_distances(sub, c).max()))
            left.append(-1)
            right.append(-1)
            if hi - lo > leaf:
                axis = int(np.argmax(sub.max(axis=0) - sub.min(axis=0)))
                idx = order[lo:hi]
                order[lo:hi] = idx[np.lexsort((idx, sub[:, axis]))]
                mid = lo + (hi - lo) // 2
                left[node] = make(lo, mid)
                right[node] = make(mid, hi)
            return node

        make(0, pts.shape[0])
        self.order = order
        self.node_start = np.array(start, dtype=np.intp)
        self.node_end = np.array(end, dtype=np.intp)
        self.node_left = np.array(left, dtype=np.intp)
        self.node_right = np.array(right, dtype=np.intp)
        self.centroids = np.ascontiguousarray(np.array(cent, dtype=np.float64))
        self.radii = np.array(rad, dtype=np.float64)
        self.last_visits = 0

    @property
    def n_points(self) -> int:
        return self.points.shape[0]

    @property
    def n_nodes(self) -> int:
        return self.node_start.shape[0]

    def flat_index(self, id_) -> int:
        """Point index of a (trajectory, step) id."""
        hits = np.flatnonzero((self.ids[:, 0] == id_[0]) & (self.ids[:, 1] == id_[1]))
        if hits.size == 0:
            raise KeyError(f"id {tuple(id_)} not in tree")
        return int(hits[0])

    def query_index(self, q, k: int = 1, exclude: int = -1,
                    predicate: Callable[[int], bool] | None = None):
        """k nearest point indices and distances, ascending by (distance, index).

        ``exclude`` skips one point index; ``predicate(index) -> bool`` skips
        every index for which it returns True.
        """
        if k < 1:
            raise ValueError("k must be >= 1")
        qv = np.ascontiguousarray(q, dtype=np.float64).reshape(-1)
        if qv.shape[0] != self.points.shape[1]:
            raise ValueError(f"query has dim {qv.shape[0]}, tree has {self.points.shape[1]}")
        k = min(int(k), self.n_points)
        args = (self.points, self.order, self.node_start, self.node_end, self.node_left,
                self.node_right, self.centroids, self.radii, qv, k, int(exclude))
        if predicate is None:
            idx, dist, visits = knn_query(*args)
        else:
            idx, dist, visits = _fallback.knn_query(*args, predicate=predicate)
        self.last_visits = int(visits)
        return np.asarray(idx, dtype=np.intp), np.asarray(dist)

    def query(self, q, k: int = 1, exclude=None) -> list[tuple[tuple[int, int], float]]:
        """k nearest neighbours as ``[((trajectory, step), distance), ...]``.

        ``exclude`` may be a (trajectory, step) id, a point index, or a callable
        taking an id and returning True for points to skip. Fewer than k
        results come back when fewer points are admissible.
        """
        ex, pred = -1, None
        if callable(exclude):
            ids = self.ids
            pred = lambda i: bool(exclude((int(ids[i, 0]), int(ids[i, 1]))))  # noqa: E731
        elif isinstance(exclude, (tuple, list, np.ndarray)):
            ex = self.flat_index(exclude)
        elif exclude is not None:
            ex = int(exclude)
        idx, dist = self.query_index(q, k, ex, pred)
        return [((int(self.ids[i, 0]), int(self.ids[i, 1])), float(d)) for i, d in zip(idx, dist)]

    def check_invariants(self) -> None:
        """Raise AssertionError if containment, leaf size or id bijection fail."""
        for node in range(self.n_nodes):
            sub = self.points[self.order[self.node_start[node]:self.node_end[node]]]
            d = row_distances(sub, self.centroids[node])
            assert np.all(d <= self.radii[node] * (1 + 1e-12) + 1e-300), f"node {node} containment"
            if self.node_left[node] < 0:
                assert sub.shape[0] <= self.leaf_size, f"leaf {node} too large"
        assert np.array_equal(np.sort(self.order), np.arange(self.n_points))

