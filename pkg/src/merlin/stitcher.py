"""Nearest-neighbour trajectory stitching.

New trajectories are grown backward from randomly chosen final states. At
every step the current state's nearest other state is looked up; when it lies
within ``delta`` the walk continues from that neighbour's predecessor (a
switch), otherwise it continues along its own trajectory. Walks stop after T
steps or at a trajectory's first state, and are stored in forward order.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np

from .dataset import Dataset, Trajectory
from .env import phi
from .neighbors import BallTree
from .rng import Rng

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class StitchConfig:
    delta: float = 1e-6
    n_new: int = 0
    seed: int = 0

    def __post_init__(self):
        if not self.delta >= 0:
            raise ValueError("delta must be >= 0")
        if self.n_new < 0:
            raise ValueError("n_new must be >= 0")


class TreeMismatchError(ValueError):
    pass


def _check_tree(dataset: Dataset, tree: BallTree) -> None:
    flat = dataset.flat
    if tree.n_points != flat.states.shape[0] or not np.array_equal(tree.points, flat.states):
        raise TreeMismatchError("ball tree was not built over this dataset")


def stitch(dataset: Dataset, tree: BallTree, config: StitchConfig) -> Dataset:
    """Return ``dataset`` plus ``config.n_new`` stitched trajectories."""
    _check_tree(dataset, tree)
    flat = dataset.flat
    n_traj = len(dataset)
    horizon = dataset.env_spec.max_steps
    step_of, traj_of = flat.state_step, flat.state_traj
    new = []
    for m in range(config.n_new):
        rng = Rng.derive(config.seed, f"stitch/{m}")
        j = rng.integers(n_traj)
        cur = int(flat.state_offset[j] + flat.lengths[j])
        states, actions, origin = [cur], [], [cur]
        switches = 0
        for _ in range(horizon):
            idx, dist = tree.query_index(flat.states[cur], 1, exclude=cur)
            if idx.size and dist[0] <= config.delta and step_of[idx[0]] > 0:
                src = int(idx[0])
                switches += 1
            elif step_of[cur] > 0:
                src = cur
            else:
                break
            prev = src - 1
            actions.append(int(flat.action_offset[traj_of[src]] + step_of[src] - 1))
            states.append(prev)
            origin.append(prev)
            cur = prev
        s_idx = np.array(states[::-1])
        final = flat.states[states[0]]
        new.append(Trajectory(
            flat.states[s_idx], flat.actions[np.array(actions[::-1], dtype=np.int64)].reshape(-1, 2),
            phi(final), switches=switches,
            origin=np.stack([traj_of[s_idx], step_of[s_idx]], axis=1)))
    out = dataset.with_trajectories(new, source="stitched")
    if config.n_new:
        log.info("stitched %d trajectories, %.3f switches each",
                 config.n_new, np.mean([t.switches for t in new]))
    return out


def stitch_stats(before: Dataset, after: Dataset) -> dict:
    """Mean switches per synthesised trajectory and cross-trajectory (state, goal) pairs."""
    n0 = len(before)
    if len(after) < n0 or not all(a.same_data(b) for a, b in zip(before.trajectories, after.trajectories)):
        raise ValueError("'after' must extend 'before'")
    synth = after.trajectories[n0:]
    pairs = 0
    for tr in synth:
        if tr.origin is None:
            continue
        n = tr.origin.shape[0]
        _, counts = np.unique(tr.origin[:, 0], return_counts=True)
        pairs += n * (n - 1) // 2 - int(np.sum(counts * (counts - 1) // 2))
    return {
        "switches_per_trajectory": float(np.mean([t.switches for t in synth])) if synth else 0.0,
        "new_state_goal_pairs": int(pairs),
    }


def tune_delta(dataset: Dataset, tree: BallTree, target: float = 1.5, n_probe: int = 200,
               seed: int = 0, iters: int = 40) -> float:
    """Bisect log(delta) until mean switches per stitched trajectory is near ``target``."""
    def mean_switches(delta: float) -> float:
        out = stitch(dataset, tree, StitchConfig(delta, n_probe, seed))
        return stitch_stats(dataset, out)["switches_per_trajectory"]

    lo, hi = -12.0, math.log10(dataset.env_spec.diameter)
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        if mean_switches(10.0 ** mid) < target:
            lo = mid
        else:
            hi = mid
    return float(10.0 ** hi)
