"""2D point-navigation tasks: PointReach and PointRooms.

States are (x, y) positions in a square arena, actions are displacements
whose Euclidean norm is capped at 1, and the goal space is the state space
(``phi`` is the identity). Positions are quantised to binary32 after every
step so that stored datasets replay through :func:`step` exactly.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .rng import Rng

WALL_BACKOFF = 1e-6


class InvalidGoalError(ValueError):
    pass


class EpisodeExhaustedError(RuntimeError):
    pass


def _rooms_walls() -> tuple:
    # x=0 and y=0, each half-wall with a centred doorway of width 1
    spans = ((-5.0, -3.0), (-2.0, 2.0), (3.0, 5.0))
    vertical = tuple(((0.0, a), (0.0, b)) for a, b in spans)
    horizontal = tuple(((a, 0.0), (b, 0.0)) for a, b in spans)
    return vertical + horizontal


@dataclass(frozen=True)
class EnvSpec:
    name: str = "PointReach"
    low: float = -5.0
    high: float = 5.0
    reward_tolerance: float = 1.0
    max_steps: int = 50
    walls: tuple = field(default=())
    state_dim: int = 2
    action_dim: int = 2
    goal_dim: int = 2

    def __post_init__(self):
        if self.name not in ("PointReach", "PointRooms"):
            raise ValueError(f"unknown environment {self.name!r}")
        if not (self.state_dim == self.action_dim == self.goal_dim == 2):
            raise ValueError("point environments are two-dimensional")
        if self.reward_tolerance <= 0 or self.max_steps <= 0:
            raise ValueError("reward tolerance and max_steps must be positive")
        if self.low != -self.high or self.high < 0:
            raise ValueError("bounds must be symmetric about the origin")
        for (x0, y0), (x1, y1) in self.walls:
            if x0 != x1 and y0 != y1:
                raise ValueError("walls must be axis-aligned")

    @property
    def diameter(self) -> float:
        return float(np.hypot(self.high - self.low, self.high - self.low))


ENV_ALIASES = {
    "point-reach": "PointReach",
    "pointreach": "PointReach",
    "point-rooms": "PointRooms",
    "pointrooms": "PointRooms",
}


def make_spec(name: str, **overrides) -> EnvSpec:
    """Build the spec for ``name`` (``PointReach``/``point-reach``/...)."""
    canonical = ENV_ALIASES.get(name.lower(), name)
    if canonical == "PointRooms":
        overrides.setdefault("walls", _rooms_walls())
    return EnvSpec(name=canonical, **overrides)


@dataclass
class EnvState:
    pos: np.ndarray
    step_count: int = 0


def phi(pos):
    """State-to-goal mapping; the identity for both point environments."""
    return pos


def reward(pos, goal, spec: EnvSpec):
    """Sparse reward 1[||phi(s) - g||_2 <= tolerance]; vectorised over rows."""
    d = np.asarray(phi(pos), dtype=np.float64) - np.asarray(goal, dtype=np.float64)
    hit = np.sqrt(np.sum(d * d, axis=-1)) <= spec.reward_tolerance
    return hit.astype(np.int64) if np.ndim(hit) else int(hit)


def clip_action(actions) -> np.ndarray:
    """Rescale rows with norm > 1 to unit length; shorter rows pass through."""
    a = np.asarray(actions, dtype=np.float64)
    norm = np.sqrt(np.sum(a * a, axis=-1, keepdims=True))
    return a / np.maximum(norm, 1.0)


def _first_wall_hit(p: np.ndarray, d: np.ndarray, walls) -> np.ndarray:
    """Smallest t in [0, 1] where p + t*d touches a wall segment (inf if none)."""
    t_hit = np.full(p.shape[0], np.inf)
    with np.errstate(divide="ignore", invalid="ignore"):
        for (x0, y0), (x1, y1) in walls:
            if x0 == x1:
                axis, c, lo, hi = 0, x0, min(y0, y1), max(y0, y1)
            else:
                axis, c, lo, hi = 1, y0, min(x0, x1), max(x0, x1)
            other = 1 - axis
            pa, da, po, do = p[:, axis], d[:, axis], p[:, other], d[:, other]
            # transversal crossing
            t = (c - pa) / da
            along = po + t * do
            ok = (da != 0) & (t >= 0) & (t <= 1) & (along >= lo) & (along <= hi)
            t_hit = np.where(ok & (t < t_hit), t, t_hit)
            # motion along the wall line
            on_line = (da == 0) & (pa == c)
            if np.any(on_line):
                t_lo = (lo - po) / do
                t_hi = (hi - po) / do
                t_in = np.where(do > 0, t_lo, t_hi)
                inside = (po >= lo) & (po <= hi)
                t_in = np.where(inside, 0.0, t_in)
                ok = on_line & (do != 0) & (t_in >= 0) & (t_in <= 1)
                t_hit = np.where(ok & (t_in < t_hit), t_in, t_hit)
    return t_hit


def _crosses_wall(p0: np.ndarray, p1: np.ndarray, walls) -> np.ndarray:
    t = _first_wall_hit(p0, p1 - p0, walls)
    return np.isfinite(t)


def step_positions(pos, actions, spec: EnvSpec) -> np.ndarray:
    """Vectorised transition for an (n, 2) batch of positions and actions."""
    p = np.asarray(pos, dtype=np.float32).astype(np.float64).reshape(-1, 2)
    disp = clip_action(np.asarray(actions, dtype=np.float32).reshape(-1, 2))
    target = np.clip(p + disp, spec.low, spec.high)
    if spec.walls:
        d = target - p
        t = _first_wall_hit(p, d, spec.walls)
        hit = np.isfinite(t)
        if np.any(hit):
            length = np.sqrt(np.sum(d * d, axis=1))
            travel = np.maximum(np.where(hit, t, 0.0) * length - WALL_BACKOFF, 0.0)
            with np.errstate(divide="ignore", invalid="ignore"):
                frac = np.where(length > 0, travel / length, 0.0)
            target = np.where(hit[:, None], p + frac[:, None] * d, target)
    out = target.astype(np.float32)
    if spec.walls:
        # binary32 rounding must not carry the point through a wall
        bad = _crosses_wall(p, out.astype(np.float64), spec.walls)
        bad &= np.any(out != p.astype(np.float32), axis=1)
        if np.any(bad):
            out[bad] = p[bad].astype(np.float32)
    return out


def step(state: EnvState, action, spec: EnvSpec) -> EnvState:
    if state.step_count >= spec.max_steps:
        raise EpisodeExhaustedError(
            f"episode already has {state.step_count} steps (limit {spec.max_steps})")
    new_pos = step_positions(state.pos[None], np.asarray(action)[None], spec)[0]
    return EnvState(pos=new_pos, step_count=state.step_count + 1)


def on_wall(pos, spec: EnvSpec) -> np.ndarray:
    p = np.asarray(pos, dtype=np.float64).reshape(-1, 2)
    hit = np.zeros(p.shape[0], dtype=bool)
    for (x0, y0), (x1, y1) in spec.walls:
        if x0 == x1:
            hit |= (p[:, 0] == x0) & (p[:, 1] >= min(y0, y1)) & (p[:, 1] <= max(y0, y1))
        else:
            hit |= (p[:, 1] == y0) & (p[:, 0] >= min(x0, x1)) & (p[:, 0] <= max(x0, x1))
    return hit


def sample_positions(spec: EnvSpec, n: int, rng: Rng) -> np.ndarray:
    """Uniform binary32 positions in the arena, avoiding wall segments."""
    out = rng.uniform(spec.low, spec.high, (n, 2)).astype(np.float32)
    while spec.walls:
        bad = on_wall(out, spec)
        if not np.any(bad):
            break
        out[bad] = rng.uniform(spec.low, spec.high, (int(bad.sum()), 2)).astype(np.float32)
    return out


def reset(spec: EnvSpec, goal_mode="uniform", rng: Rng | None = None,
          goal=None) -> tuple[EnvState, np.ndarray]:
    """Start an episode.

    ``goal_mode`` is ``"uniform"`` or ``"fixed"`` (with ``goal``); passing a
    goal vector as ``goal_mode`` is shorthand for fixed mode.
    """
    if not isinstance(goal_mode, str):
        goal_mode, goal = "fixed", goal_mode
    rng = rng if rng is not None else Rng(0)
    if goal_mode == "fixed":
        g = np.asarray(goal, dtype=np.float32).reshape(2)
        if np.any(g < spec.low) or np.any(g > spec.high):
            raise InvalidGoalError(f"goal {g.tolist()} outside [{spec.low}, {spec.high}]^2")
    elif goal_mode == "uniform":
        g = None
    else:
        raise ValueError(f"unknown goal mode {goal_mode!r}")
    pos = sample_positions(spec, 1, rng)[0]
    if g is None:
        g = sample_positions(spec, 1, rng)[0]
    return EnvState(pos=pos, step_count=0), g
