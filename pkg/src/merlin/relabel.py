"""Hindsight relabelling into (state, action, goal, horizon) training tuples."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .dataset import Dataset
from .env import phi
from .rng import Rng


@dataclass(frozen=True)
class RelabelConfig:
    hindsight_ratio: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.hindsight_ratio <= 1.0:
            raise ValueError("hindsight_ratio must lie in [0, 1]")


@dataclass
class TrainBatch:
    """Column-wise batch of training tuples.

    ``traj``, ``t`` and ``future`` record where each tuple came from: the goal
    of a relabelled tuple is ``phi(states[future])`` of trajectory ``traj``.
    """

    s: np.ndarray
    a: np.ndarray
    g: np.ndarray
    h: np.ndarray
    relabeled: np.ndarray
    traj: np.ndarray
    t: np.ndarray
    future: np.ndarray

    def __len__(self) -> int:
        return self.s.shape[0]

    @classmethod
    def concat(cls, parts) -> "TrainBatch":
        return cls(*(np.concatenate([getattr(p, f) for p in parts])
                     for f in cls.__dataclass_fields__))


def sample_batch(dataset: Dataset, batch_size: int, config: RelabelConfig, rng: Rng) -> TrainBatch:
    """Sample transitions uniformly (so trajectories proportionally to length).

    With probability ``hindsight_ratio`` the goal becomes a uniformly chosen
    later state of the same trajectory and ``h`` the index gap; otherwise the
    trajectory's desired goal is kept with ``h`` the steps remaining.
    """
    if batch_size < 1:
        raise ValueError("batch_size must be >= 1")
    flat = dataset.flat
    n = flat.n_transitions
    if n == 0:
        raise ValueError("dataset has no transitions to sample")
    u = rng.random((3, batch_size))
    k = np.minimum((u[0] * n).astype(np.int64), n - 1)
    traj = np.searchsorted(flat.action_offset, k, side="right") - 1
    t = k - flat.action_offset[traj]
    L = flat.lengths[traj]
    relabeled = u[1] < config.hindsight_ratio
    span = L - t
    future = t + 1 + np.minimum((u[2] * span).astype(np.int64), span - 1)
    future = np.where(relabeled, future, L)
    base = flat.state_offset[traj]
    g = np.where(relabeled[:, None], phi(flat.states[base + future]), flat.goals[traj])
    return TrainBatch(
        s=flat.states[base + t], a=flat.actions[k], g=g, h=future - t,
        relabeled=relabeled, traj=traj, t=t, future=future)
