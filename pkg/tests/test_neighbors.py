import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from merlin import _fallback, _kernels
from merlin.neighbors import BallTree
from merlin.rng import Rng

from conftest import brute_knn


def test_single_point():
    t = BallTree([[1.0, 2.0]])
    assert t.n_nodes == 1 and t.radii[0] == 0.0
    assert t.query([1.0, 2.0], 1) == [((0, 0), 0.0)]


def test_duplicates_zero_radius():
    t = BallTree(np.full((100, 3), 0.3), leaf_size=4)
    assert np.all(t.radii == 0.0)
    t.check_invariants()
    res = t.query([0.3, 0.3, 0.3], 3, exclude=0)
    assert [r[0][1] for r in res] == [1, 2, 3]


def test_containment_10k():
    pts = Rng(1).uniform(-5, 5, (10_000, 2))
    t = BallTree(pts)
    t.check_invariants()
    assert np.all(t.node_end[t.node_left < 0] - t.node_start[t.node_left < 0] <= 32)


def test_matches_brute_force_1000():
    pts = Rng(2).uniform(-1, 1, (1000, 2))
    t = BallTree(pts, leaf_size=8)
    for q in Rng(3).uniform(-1.2, 1.2, (200, 2)):
        idx, dist = t.query_index(q, 5)
        ref_idx, ref_dist = brute_knn(pts, q, 5)
        assert np.array_equal(idx, ref_idx)
        assert np.allclose(dist, ref_dist, rtol=1e-12, atol=0)


def test_exclude_self():
    pts = Rng(4).uniform(-1, 1, (300, 2))
    t = BallTree(pts)
    for i in range(0, 300, 7):
        idx, dist = t.query_index(pts[i], 1, exclude=i)
        ref_idx, _ = brute_knn(pts, pts[i], 1, skip={i})
        assert idx[0] == ref_idx[0] and dist[0] > 0


def test_query_by_id_and_predicate(small_random):
    t = BallTree.from_dataset(small_random)
    flat = small_random.flat
    q = flat.states[5]
    res = t.query(q, 3, exclude=(0, 5))
    assert all(r[0] != (0, 5) for r in res)
    res = t.query(q, 4, exclude=lambda id_: id_[0] == 0)
    assert all(r[0][0] != 0 for r in res)
    ref_idx, _ = brute_knn(flat.states, q, 4, skip=set(range(51)))
    assert [t.flat_index(r[0]) for r in res] == list(ref_idx)


def test_k_larger_than_admissible():
    t = BallTree(np.eye(3))
    assert len(t.query([0, 0, 0], 10)) == 3
    assert len(t.query([0, 0, 0], 10, exclude=lambda i: i[1] == 1)) == 2


def test_ties_by_index():
    pts = np.array([[1.0, 0], [-1.0, 0], [0, 1.0], [0, -1.0]])
    t = BallTree(pts, leaf_size=1)
    assert [r[0][1] for r in t.query([0, 0], 4)] == [0, 1, 2, 3]


def test_errors():
    with pytest.raises(ValueError):
        BallTree(np.zeros((0, 2)))
    t = BallTree(np.zeros((3, 2)))
    with pytest.raises(ValueError):
        t.query_index([0, 0, 0], 1)
    with pytest.raises(ValueError):
        t.query_index([0, 0], 0)


def test_backends_agree():
    pts = Rng(5).uniform(-1, 1, (2000, 11))
    t = BallTree(pts, leaf_size=16)
    args = (t.points, t.order, t.node_start, t.node_end, t.node_left, t.node_right,
            t.centroids, t.radii)
    for q in Rng(6).uniform(-1, 1, (30, 11)):
        a = _kernels.knn_query(*args, q, 5, 3)
        b = _fallback.knn_query(*args, q, 5, 3)
        assert np.array_equal(a[0], b[0]) and np.array_equal(a[1], b[1]) and a[2] == b[2]


def test_visits_sublinear():
    visits = []
    for n in (1000, 16000):
        pts = Rng(n).uniform(-1, 1, (n, 2))
        t = BallTree(pts)
        v = 0
        for q in Rng(7).uniform(-1, 1, (100, 2)):
            t.query_index(q, 1)
            v += t.last_visits
        visits.append(v / 100)
    assert visits[1] < 16 * visits[0] / 4


@given(arrays(np.float64, st.tuples(st.integers(1, 120), st.integers(1, 4)),
              elements=st.floats(-3, 3, allow_nan=False, width=16)),
       st.integers(1, 5), st.integers(1, 9), st.integers(0, 2**32))
@settings(max_examples=150, deadline=None)
def test_brute_force_property(pts, k, leaf, seed):
    # float16-valued coordinates produce many exact ties and duplicates
    t = BallTree(pts, leaf_size=leaf)
    t.check_invariants()
    q = Rng(seed).uniform(-3, 3, pts.shape[1])
    for query in (q, pts[0]):
        idx, dist = t.query_index(query, k, exclude=0)
        ref_idx, ref_dist = brute_knn(pts, query, k, skip={0})
        assert np.array_equal(idx, ref_idx)
        assert np.array_equal(dist, ref_dist) or np.allclose(dist, ref_dist, rtol=1e-12, atol=0)
