"""Time the compiled kernels against their pure-Python twins.

    python3 benchmarks/bench_kernels.py [--repeat 5]
"""
import argparse
import time

import numpy as np

from merlin import _fallback
from merlin.neighbors import BallTree

try:
    from merlin import _core
except ImportError:
    _core = None


def best_of(fn, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def bench_xoshiro(mod, n):
    state = np.array([1, 2, 3, 4], dtype=np.uint64)
    return lambda: mod.xoshiro_fill(state, n)


def bench_knn(mod, tree, queries, k):
    args = (tree.points, tree.order, tree.node_start, tree.node_end, tree.node_left,
            tree.node_right, tree.centroids, tree.radii)

    def run():
        for q in queries:
            mod.knn_query(*args, q, k, -1)
    return run


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--n-points", type=int, default=10_000)
    ap.add_argument("--n-queries", type=int, default=200)
    ap.add_argument("--dim", type=int, default=2)
    args = ap.parse_args(argv)

    rs = np.random.default_rng(0)
    tree = BallTree(rs.uniform(-10, 10, (args.n_points, args.dim)))
    queries = rs.uniform(-10, 10, (args.n_queries, args.dim))
    cases = [
        ("xoshiro_fill n=100000", lambda m: bench_xoshiro(m, 100_000)),
        (f"knn_query k=5 N={args.n_points} d={args.dim} x{args.n_queries}",
         lambda m: bench_knn(m, tree, queries, 5)),
    ]
    print(f"{'kernel':<42} {'python s':>10} {'compiled s':>11} {'speedup':>8}")
    for name, make in cases:
        py = best_of(make(_fallback), args.repeat)
        if _core is None:
            print(f"{name:<42} {py:10.4f} {'n/a':>11} {'n/a':>8}")
            continue
        c = best_of(make(_core), args.repeat)
        print(f"{name:<42} {py:10.4f} {c:11.5f} {py / c:7.1f}x")


if __name__ == "__main__":
    main()
