"""Offline trajectory datasets: generation, in-memory views, binary I/O.

On-disk layout (all integers little-endian, floats IEEE binary32 LE)::

    "MRLN" | version u32 | env name (u32 length + UTF-8)
           | source (u32 length + UTF-8) | seed u64
           | state_dim u32 | action_dim u32 | goal_dim u32
           | n_traj u64 | n_transitions u64
           | per trajectory:
               L u32 | states f32[(L+1)*state_dim] | actions f32[L*action_dim]
               | desired_goal f32[goal_dim]
"""
from __future__ import annotations

import struct
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path

import numpy as np

from . import env as envlib
from .env import EnvSpec
from .rng import Rng, derive_seed

MAGIC = b"MRLN"
FORMAT_VERSION = 1
SOURCES = ("random", "expert", "stitched", "model_rollout", "reverse_play")


class DatasetFormatError(ValueError):
    """Base class for dataset loading failures."""


class DatasetVersionError(DatasetFormatError):
    pass


class TruncatedDatasetError(DatasetFormatError):
    pass


class DimensionMismatchError(DatasetFormatError):
    pass


@dataclass
class Trajectory:
    states: np.ndarray
    actions: np.ndarray
    desired_goal: np.ndarray
    # stitching provenance, kept in memory only
    switches: int = 0
    origin: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        self.states = np.ascontiguousarray(self.states, dtype=np.float32)
        self.actions = np.ascontiguousarray(self.actions, dtype=np.float32)
        self.desired_goal = np.ascontiguousarray(self.desired_goal, dtype=np.float32)
        if self.states.ndim != 2 or self.actions.ndim != 2:
            raise ValueError("states and actions must be 2-D arrays")
        if self.states.shape[0] != self.actions.shape[0] + 1:
            raise ValueError(
                f"{self.states.shape[0]} states for {self.actions.shape[0]} actions; "
                "need exactly one more state than actions")

    @property
    def length(self) -> int:
        return self.actions.shape[0]

    def same_data(self, other: "Trajectory") -> bool:
        return (self.states.shape == other.states.shape
                and self.states.tobytes() == other.states.tobytes()
                and self.actions.tobytes() == other.actions.tobytes()
                and self.desired_goal.tobytes() == other.desired_goal.tobytes())


@dataclass(frozen=True)
class FlatView:
    """Concatenated arrays over a dataset, for vectorised sampling and search."""

    states: np.ndarray          # (n_states, state_dim) float64
    state_offset: np.ndarray    # (n_traj,) index of each trajectory's first state
    lengths: np.ndarray         # (n_traj,) actions per trajectory
    actions: np.ndarray         # (n_transitions, action_dim) float64
    action_offset: np.ndarray   # (n_traj,)
    goals: np.ndarray           # (n_traj, goal_dim) float64
    state_traj: np.ndarray      # (n_states,) trajectory of each state
    state_step: np.ndarray      # (n_states,) index within its trajectory

    @property
    def n_transitions(self) -> int:
        return int(self.actions.shape[0])


class Dataset:
    def __init__(self, trajectories, env_spec: EnvSpec, source: str = "random", seed: int = 0):
        if source not in SOURCES:
            raise ValueError(f"unknown dataset source {source!r}")
        self.trajectories = list(trajectories)
        self.env_spec = env_spec
        self.source = source
        self.seed = int(seed)
        for tr in self.trajectories:
            if tr.states.shape[1] != env_spec.state_dim or tr.actions.shape[1] != env_spec.action_dim \
                    or tr.desired_goal.shape != (env_spec.goal_dim,):
                raise DimensionMismatchError("trajectory dimensions do not match the environment")

    def __len__(self) -> int:
        return len(self.trajectories)

    def __iter__(self):
        return iter(self.trajectories)

    def __repr__(self) -> str:
        return (f"Dataset(env={self.env_spec.name}, source={self.source}, "
                f"n_traj={len(self)}, n_transitions={self.n_transitions})")

    def __eq__(self, other) -> bool:
        if not isinstance(other, Dataset):
            return NotImplemented
        return (self.env_spec.name == other.env_spec.name and self.source == other.source
                and self.seed == other.seed and len(self) == len(other)
                and all(a.same_data(b) for a, b in zip(self.trajectories, other.trajectories)))

    @property
    def n_transitions(self) -> int:
        return sum(tr.length for tr in self.trajectories)

    @property
    def n_states(self) -> int:
        return sum(tr.length + 1 for tr in self.trajectories)

    @cached_property
    def flat(self) -> FlatView:
        lengths = np.array([tr.length for tr in self.trajectories], dtype=np.int64)
        sd = self.env_spec.state_dim
        states = (np.concatenate([tr.states for tr in self.trajectories]).astype(np.float64)
                  if self.trajectories else np.zeros((0, sd)))
        actions = (np.concatenate([tr.actions for tr in self.trajectories]).astype(np.float64)
                   if self.trajectories else np.zeros((0, self.env_spec.action_dim)))
        state_offset = np.concatenate([[0], np.cumsum(lengths + 1)[:-1]]).astype(np.int64)
        action_offset = np.concatenate([[0], np.cumsum(lengths)[:-1]]).astype(np.int64)
        state_traj = np.repeat(np.arange(len(lengths)), lengths + 1)
        state_step = np.arange(states.shape[0]) - np.repeat(state_offset, lengths + 1)
        goals = (np.stack([tr.desired_goal for tr in self.trajectories]).astype(np.float64)
                 if self.trajectories else np.zeros((0, self.env_spec.goal_dim)))
        return FlatView(states, state_offset, lengths, actions, action_offset, goals,
                        state_traj, state_step)

    def with_trajectories(self, extra, source: str | None = None) -> "Dataset":
        return Dataset(self.trajectories + list(extra), self.env_spec,
                       source or self.source, self.seed)


# ---------------------------------------------------------------- generation

def _rollout(spec: EnvSpec, starts: np.ndarray, controller) -> np.ndarray:
    """Step all trajectories in lockstep; returns (n, T+1, 2) states and (n, T, 2) actions."""
    n, T = starts.shape[0], spec.max_steps
    states = np.empty((n, T + 1, 2), dtype=np.float32)
    actions = np.empty((n, T, 2), dtype=np.float32)
    states[:, 0] = starts
    for t in range(T):
        actions[:, t] = controller(t, states[:, t])
        states[:, t + 1] = envlib.step_positions(states[:, t], actions[:, t], spec)
    return states, actions


def _per_traj(seed: int, tag: str, i: int) -> Rng:
    return Rng(derive_seed(seed, f"{tag}/{i}"))


def generate_random(spec: EnvSpec, n_traj: int, seed: int) -> Dataset:
    """Uniform-random start and goal, actions uniform on [-1, 1]^2, length T."""
    if n_traj <= 0:
        raise ValueError("n_traj must be positive")
    T = spec.max_steps
    starts = np.empty((n_traj, 2), dtype=np.float32)
    goals = np.empty((n_traj, 2), dtype=np.float32)
    acts = np.empty((n_traj, T, 2), dtype=np.float32)
    for i in range(n_traj):
        rng = _per_traj(seed, "random", i)
        starts[i] = envlib.sample_positions(spec, 1, rng)[0]
        goals[i] = envlib.sample_positions(spec, 1, rng)[0]
        acts[i] = rng.uniform(-1.0, 1.0, (T, 2))
    states, actions = _rollout(spec, starts, lambda t, s: acts[:, t])
    trajs = [Trajectory(states[i], actions[i], goals[i]) for i in range(n_traj)]
    return Dataset(trajs, spec, "random", seed)


def expert_action(pos: np.ndarray, goal: np.ndarray) -> np.ndarray:
    """Greedy controller: unit step toward the goal, shortened to land on it."""
    d = goal.astype(np.float64) - pos.astype(np.float64)
    dist = np.sqrt(np.sum(d * d, axis=-1, keepdims=True))
    with np.errstate(divide="ignore", invalid="ignore"):
        unit = np.where(dist > 0, d / dist, 0.0)
    return unit * np.minimum(1.0, dist)


def generate_expert(spec: EnvSpec, n_traj: int, noise_sigma: float, seed: int) -> Dataset:
    """Scripted near-optimal behaviour with Gaussian action noise."""
    if n_traj <= 0:
        raise ValueError("n_traj must be positive")
    if noise_sigma < 0:
        raise ValueError("noise_sigma must be non-negative")
    T = spec.max_steps
    starts = np.empty((n_traj, 2), dtype=np.float32)
    goals = np.empty((n_traj, 2), dtype=np.float32)
    noise = np.empty((n_traj, T, 2))
    for i in range(n_traj):
        rng = _per_traj(seed, "expert", i)
        starts[i] = envlib.sample_positions(spec, 1, rng)[0]
        goals[i] = envlib.sample_positions(spec, 1, rng)[0]
        noise[i] = rng.normal((T, 2))

    def controller(t, s):
        a = expert_action(s, goals) + noise_sigma * noise[:, t]
        return np.clip(a, -1.0, 1.0)

    states, actions = _rollout(spec, starts, controller)
    trajs = [Trajectory(states[i], actions[i], goals[i]) for i in range(n_traj)]
    return Dataset(trajs, spec, "expert", seed)


def generate_reverse_play(spec: EnvSpec, n_traj: int, goal, seed: int) -> Dataset:
    """Trajectories that end at ``goal``: random walks away from it, played backward.

    Each walk takes T uniform-random actions starting at the goal. The walk is
    reversed and then replayed forward through the environment so that every
    stored transition is exactly reproducible.
    """
    if n_traj <= 0:
        raise ValueError("n_traj must be positive")
    g = np.asarray(goal, dtype=np.float32).reshape(2)
    if np.any(g < spec.low) or np.any(g > spec.high):
        raise envlib.InvalidGoalError(f"goal {g.tolist()} outside the arena")
    T = spec.max_steps
    acts = np.stack([_per_traj(seed, "reverse_play", i).uniform(-1.0, 1.0, (T, 2))
                     for i in range(n_traj)]).astype(np.float32)
    away, _ = _rollout(spec, np.repeat(g[None], n_traj, axis=0), lambda t, s: acts[:, t])
    back = away[:, ::-1]
    fwd_actions = (back[:, 1:].astype(np.float64) - back[:, :-1]).astype(np.float32)
    states, actions = _rollout(spec, back[:, 0], lambda t, s: fwd_actions[:, t])
    trajs = [Trajectory(states[i], actions[i], g) for i in range(n_traj)]
    return Dataset(trajs, spec, "reverse_play", seed)


# ----------------------------------------------------------------------- I/O

def _pack_str(s: str) -> bytes:
    raw = s.encode("utf-8")
    return struct.pack("<I", len(raw)) + raw


def to_bytes(ds: Dataset) -> bytes:
    spec = ds.env_spec
    parts = [MAGIC, struct.pack("<I", FORMAT_VERSION), _pack_str(spec.name),
             _pack_str(ds.source), struct.pack("<Q", ds.seed & (2**64 - 1)),
             struct.pack("<III", spec.state_dim, spec.action_dim, spec.goal_dim),
             struct.pack("<QQ", len(ds), ds.n_transitions)]
    for tr in ds.trajectories:
        parts.append(struct.pack("<I", tr.length))
        parts.append(tr.states.astype("<f4").tobytes())
        parts.append(tr.actions.astype("<f4").tobytes())
        parts.append(tr.desired_goal.astype("<f4").tobytes())
    return b"".join(parts)


def save(ds: Dataset, path) -> None:
    Path(path).write_bytes(to_bytes(ds))


class _Reader:
    def __init__(self, buf: bytes):
        self.buf = buf
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.buf):
            raise TruncatedDatasetError(
                f"file truncated: wanted {n} bytes at offset {self.pos}, have {len(self.buf) - self.pos}")
        out = self.buf[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))

    def string(self) -> str:
        (n,) = self.unpack("<I")
        try:
            return self.take(n).decode("utf-8")
        except UnicodeDecodeError as exc:
            raise DatasetFormatError("invalid UTF-8 string in header") from exc

    def floats(self, n: int) -> np.ndarray:
        return np.frombuffer(self.take(4 * n), dtype="<f4").astype(np.float32)


def from_bytes(buf: bytes) -> Dataset:
    r = _Reader(buf)
    if r.take(4) != MAGIC:
        raise DatasetVersionError("bad magic bytes: not a dataset file")
    (version,) = r.unpack("<I")
    if version != FORMAT_VERSION:
        raise DatasetVersionError(f"unsupported dataset format version {version}")
    name = r.string()
    source = r.string()
    (seed,) = r.unpack("<Q")
    sd, ad, gd = r.unpack("<III")
    try:
        spec = envlib.make_spec(name)
    except ValueError as exc:
        raise DatasetFormatError(str(exc)) from exc
    if (sd, ad, gd) != (spec.state_dim, spec.action_dim, spec.goal_dim):
        raise DimensionMismatchError(
            f"file dims {(sd, ad, gd)} do not match {name} "
            f"{(spec.state_dim, spec.action_dim, spec.goal_dim)}")
    n_traj, n_trans = r.unpack("<QQ")
    trajs = []
    for _ in range(n_traj):
        (L,) = r.unpack("<I")
        states = r.floats((L + 1) * sd).reshape(L + 1, sd)
        actions = r.floats(L * ad).reshape(L, ad)
        goal = r.floats(gd)
        trajs.append(Trajectory(states, actions, goal))
    if r.pos != len(buf):
        raise DatasetFormatError(f"{len(buf) - r.pos} trailing bytes after last trajectory")
    if source not in SOURCES:
        raise DatasetFormatError(f"unknown source {source!r}")
    ds = Dataset(trajs, spec, source, seed)
    if ds.n_transitions != n_trans:
        raise DatasetFormatError(
            f"header claims {n_trans} transitions, file holds {ds.n_transitions}")
    return ds


def load(path) -> Dataset:
    return from_bytes(Path(path).read_bytes())
