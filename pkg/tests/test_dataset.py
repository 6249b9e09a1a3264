import struct

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from merlin import dataset as D
from merlin.env import make_spec, reward, step_positions


def header_size(ds):
    return (4 + 4 + 4 + len(ds.env_spec.name) + 4 + len(ds.source) + 8 + 12 + 16)


def test_random_size_and_file_bytes(tmp_path, reach):
    ds = D.generate_random(reach, 2000, seed=1)
    assert len(ds) == 2000 and ds.n_transitions == 100_000
    path = tmp_path / "d.mrln"
    D.save(ds, path)
    body = 2000 * (51 * 2 + 50 * 2 + 2) * 4
    assert path.stat().st_size == header_size(ds) + body + 2000 * 4


def test_random_reproducible_bytes(reach):
    a = D.to_bytes(D.generate_random(reach, 1, seed=9))
    b = D.to_bytes(D.generate_random(reach, 1, seed=9))
    assert a == b
    assert a != D.to_bytes(D.generate_random(reach, 1, seed=10))


def test_random_actions_uniform(reach):
    ds = D.generate_random(reach, 2000, seed=2)
    a = ds.flat.actions.ravel()
    assert a.min() >= -1 and a.max() <= 1
    counts, _ = np.histogram(a[:100_000], bins=100, range=(-1, 1))
    expected = 1000.0
    chi2 = np.sum((counts - expected) ** 2 / expected)
    # 99 degrees of freedom, upper 1% point
    assert chi2 < 134.64


@pytest.mark.parametrize("gen", ["random", "expert", "reverse_play"])
@pytest.mark.parametrize("env", ["PointReach", "PointRooms"])
def test_transitions_replay(gen, env):
    spec = make_spec(env)
    if gen == "random":
        ds = D.generate_random(spec, 30, seed=4)
    elif gen == "expert":
        ds = D.generate_expert(spec, 30, 0.2, seed=4)
    else:
        ds = D.generate_reverse_play(spec, 30, (0.5, 0.5), seed=4)
    for tr in ds.trajectories:
        nxt = step_positions(tr.states[:-1], tr.actions, spec)
        assert np.max(np.abs(nxt.astype(np.float64) - tr.states[1:])) <= 1e-9


def test_expert_noiseless_succeeds(reach):
    ds = D.generate_expert(reach, 200, 0.0, seed=5)
    for tr in ds.trajectories:
        assert reward(tr.states[-1], tr.desired_goal, reach) == 1
        # reached well before the end and stays
        assert np.all(reward(tr.states[-35:], tr.desired_goal, reach) == 1)


def test_expert_start_at_goal_zero_actions():
    g = np.array([1.5, -2.0], dtype=np.float32)
    assert np.all(D.expert_action(g[None], g[None]) == 0)


def test_expert_noisy_success_rate(reach):
    ds = D.generate_expert(reach, 500, 0.2, seed=6)
    ok = [reward(tr.states[-1], tr.desired_goal, reach) for tr in ds.trajectories]
    assert np.mean(ok) >= 0.9


def test_reverse_play_ends_at_goal(reach):
    ds = D.generate_reverse_play(reach, 50, (0.0, 0.0), seed=1)
    finals = np.array([tr.states[-1] for tr in ds.trajectories])
    assert np.all(np.linalg.norm(finals, axis=1) < 1e-4)


def test_round_trip(tmp_path, reach, rooms):
    for ds in (D.generate_random(reach, 20, 1), D.generate_expert(rooms, 20, 0.1, 2)):
        D.save(ds, tmp_path / "x")
        assert D.load(tmp_path / "x") == ds


def test_load_errors(reach):
    raw = D.to_bytes(D.generate_random(reach, 3, 1))
    with pytest.raises(D.DatasetVersionError):
        D.from_bytes(b"XXXX" + raw[4:])
    with pytest.raises(D.DatasetVersionError):
        D.from_bytes(raw[:4] + struct.pack("<I", 99) + raw[8:])
    with pytest.raises(D.TruncatedDatasetError):
        D.from_bytes(raw[:-5])
    with pytest.raises(D.DatasetFormatError):
        D.from_bytes(raw + b"\0")
    off = 4 + 4 + 4 + len("PointReach") + 4 + len("random") + 8
    bad = raw[:off] + struct.pack("<I", 3) + raw[off + 4:]
    with pytest.raises(D.DimensionMismatchError):
        D.from_bytes(bad)


def test_trajectory_shape_invariant():
    with pytest.raises(ValueError):
        D.Trajectory(np.zeros((3, 2)), np.zeros((3, 2)), np.zeros(2))


def test_dimension_check(reach):
    tr = D.Trajectory(np.zeros((2, 3)), np.zeros((1, 3)), np.zeros(3))
    with pytest.raises(D.DimensionMismatchError):
        D.Dataset([tr], reach)


@given(st.integers(1, 6), st.integers(0, 2**32))
@settings(max_examples=20, deadline=None)
def test_round_trip_property(n, seed):
    spec = make_spec("PointReach")
    ds = D.generate_random(spec, n, seed)
    assert D.from_bytes(D.to_bytes(ds)) == ds
