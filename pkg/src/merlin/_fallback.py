"""Pure-Python twins of the kernels in ``_core.pyx``.

Results match the compiled versions bit for bit: distances are accumulated
coordinate by coordinate in the same order, and the candidate set uses the
same (distance, index) ordering.
"""
from __future__ import annotations

import bisect

import numpy as np

_MASK = (1 << 64) - 1


def _rotl(x: int, k: int) -> int:
    return ((x << k) | (x >> (64 - k))) & _MASK


def xoshiro_fill(state: np.ndarray, n: int) -> np.ndarray:
    s0, s1, s2, s3 = (int(v) for v in state)
    out = np.empty(n, dtype=np.uint64)
    for i in range(n):
        out[i] = (_rotl((s0 + s3) & _MASK, 23) + s0) & _MASK
        t = (s1 << 17) & _MASK
        s2 ^= s0
        s3 ^= s1
        s1 ^= s2
        s0 ^= s3
        s2 ^= t
        s3 = _rotl(s3, 45)
    state[:] = np.array([s0, s1, s2, s3], dtype=np.uint64)
    return out


def row_distances(points: np.ndarray, q: np.ndarray) -> np.ndarray:
    """Euclidean distances with sequential per-coordinate accumulation."""
    diff = points[:, 0] - q[0]
    acc = diff * diff
    for j in range(1, q.shape[0]):
        diff = points[:, j] - q[j]
        acc = acc + diff * diff
    return np.sqrt(acc)


def knn_query(points, order, start, end, left, right, centroid, radius, q, k, exclude,
              predicate=None):
    cand: list[tuple[float, int]] = []
    visits = 0

    def search(node: int, lb: float) -> None:
        nonlocal visits
        visits += 1
        if len(cand) == k:
            worst = cand[-1][0]
            if lb > worst + 1e-10 * worst:
                return
        if left[node] < 0:
            pids = order[start[node]:end[node]]
            dists = row_distances(points[pids], q)
            for pid, d in zip(pids.tolist(), dists.tolist()):
                if pid == exclude or (predicate is not None and predicate(pid)):
                    continue
                item = (d, pid)
                if len(cand) == k:
                    if item >= cand[-1]:
                        continue
                    cand.pop()
                bisect.insort(cand, item)
            return
        c1, c2 = int(left[node]), int(right[node])
        lbs = row_distances(centroid[[c1, c2]], q) - radius[[c1, c2]]
        lb1, lb2 = max(float(lbs[0]), 0.0), max(float(lbs[1]), 0.0)
        if lb2 < lb1:
            c1, c2, lb1, lb2 = c2, c1, lb2, lb1
        search(c1, lb1)
        search(c2, lb2)

    lb0 = float(row_distances(centroid[:1], q)[0] - radius[0])
    search(0, max(lb0, 0.0))
    idx = np.array([p for _, p in cand], dtype=np.intp)
    dist = np.array([d for d, _ in cand], dtype=np.float64)
    return idx, dist, visits
