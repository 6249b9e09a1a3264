"""Policy evaluation: discounted return, success rate, sweeps and vector fields."""
from __future__ import annotations

import csv
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .env import EnvSpec, reset, reward, step_positions
from .rng import Rng

DEFAULT_GAMMA = 0.98
FIELD_HEADER = ["x", "y", "mu_x", "mu_y", "sigma_x", "sigma_y"]


@dataclass
class EvalReport:
    discounted_return: float
    return_std: float
    success_rate: float
    any_step_success: float
    n_episodes: int
    gamma: float
    eval_horizon: int
    seed: int
    goal: tuple | None = None
    returns: np.ndarray = field(default=None, repr=False, compare=False)

    def row(self) -> dict:
        out = asdict(self)
        out.pop("returns")
        out["goal"] = "" if self.goal is None else " ".join(f"{v:g}" for v in self.goal)
        return out


def max_return(gamma: float, horizon: int) -> float:
    """Return of an episode rewarded on every step."""
    if gamma == 1.0:
        return float(horizon)
    return (1.0 - gamma ** horizon) / (1.0 - gamma)


def rollout(policy, spec: EnvSpec, starts, goals, h: int):
    """Step every episode for ``spec.max_steps`` with mean actions; returns rewards (n, T)."""
    pos = np.asarray(starts, dtype=np.float32)
    goals = np.asarray(goals, dtype=np.float32)
    rewards = np.zeros((pos.shape[0], spec.max_steps), dtype=np.int64)
    for t in range(spec.max_steps):
        a = policy.act(pos, goals, h, mode="mean")
        pos = step_positions(pos, a, spec)
        rewards[:, t] = reward(pos, goals, spec)
    return rewards


def evaluate(policy, spec: EnvSpec, n_episodes: int = 100, gamma: float = DEFAULT_GAMMA,
             h: int = 1, goal_mode="uniform", seed: int = 0, goal=None) -> EvalReport:
    """Mean-action episodes at a fixed horizon input ``h``.

    Episode i draws its start (and goal) from ``Rng.derive(seed, "episode/i")``.
    The reward after step t is discounted by gamma**t.
    """
    if n_episodes < 1:
        raise ValueError("n_episodes must be >= 1")
    if not 0.0 < gamma <= 1.0:
        raise ValueError("gamma must lie in (0, 1]")
    if not isinstance(goal_mode, str):
        goal_mode, goal = "fixed", goal_mode
    starts, goals = [], []
    for i in range(n_episodes):
        st, g = reset(spec, goal_mode, Rng.derive(seed, f"episode/{i}"), goal)
        starts.append(st.pos)
        goals.append(g)
    r = rollout(policy, spec, np.stack(starts), np.stack(goals), h)
    returns = r @ (gamma ** np.arange(spec.max_steps))
    return EvalReport(
        discounted_return=float(returns.mean()), return_std=float(returns.std()),
        success_rate=float(r[:, -1].mean()), any_step_success=float(r.max(axis=1).mean()),
        n_episodes=n_episodes, gamma=gamma, eval_horizon=int(h), seed=seed,
        goal=None if goal_mode == "uniform" else tuple(float(v) for v in np.ravel(goal)),
        returns=returns)


def ood_goal_sweep(policy, spec: EnvSpec, goals, n_per_goal: int = 100, seed: int = 0,
                   gamma: float = DEFAULT_GAMMA, h: int = 1) -> list[EvalReport]:
    """Fixed-goal evaluation at each goal in ``goals``."""
    return [evaluate(policy, spec, n_per_goal, gamma, h, "fixed", seed, g) for g in goals]


def horizon_sweep(policy, spec: EnvSpec, horizons, n_episodes: int = 100,
                  gamma: float = DEFAULT_GAMMA, goal_mode="uniform", seed: int = 0,
                  goal=None) -> list[EvalReport]:
    return [evaluate(policy, spec, n_episodes, gamma, h, goal_mode, seed, goal) for h in horizons]


def vector_field(policy, spec: EnvSpec, goal, h: int, grid=(20, 20)) -> np.ndarray:
    """Rows (x, y, mu_x, mu_y, sigma_x, sigma_y) over a uniform grid, row-major in y.

    Cell centres are used, so a 1x1 grid evaluates the arena centre.
    """
    if spec.state_dim != 2:
        raise ValueError("vector fields need a two-dimensional environment")
    nx, ny = grid
    if nx < 1 or ny < 1:
        raise ValueError("grid dimensions must be >= 1")
    xs = spec.low + (np.arange(nx) + 0.5) * (spec.high - spec.low) / nx
    ys = spec.low + (np.arange(ny) + 0.5) * (spec.high - spec.low) / ny
    yy, xx = np.meshgrid(ys, xs, indexing="ij")
    pts = np.stack([xx.ravel(), yy.ravel()], axis=1)
    mu, sigma = policy.distribution(pts, np.asarray(goal, dtype=np.float64), h)
    return np.concatenate([pts, mu, sigma], axis=1)


def export_vector_field(policy, spec: EnvSpec, goal, h: int, grid, path) -> np.ndarray:
    rows = vector_field(policy, spec, goal, h, grid)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(FIELD_HEADER)
        w.writerows([[repr(float(v)) for v in r] for r in rows])
    return rows


def goal_cosine(rows: np.ndarray, goal, exclude_radius: float = 1.0) -> float:
    """Average cosine between mean actions and the direction to ``goal``.

    Cells closer to the goal than ``exclude_radius`` are skipped.
    """
    d = np.asarray(goal, dtype=np.float64) - rows[:, :2]
    mu = rows[:, 2:4]
    dist = np.linalg.norm(d, axis=1)
    denom = dist * np.linalg.norm(mu, axis=1)
    ok = (denom > 0) & (dist >= exclude_radius)
    return float(np.mean(np.sum(d[ok] * mu[ok], axis=1) / denom[ok]))


def write_reports(reports, path) -> None:
    reports = list(reports)
    path = Path(path)
    with open(path, "w", newline="") as fh:
        if not reports:
            return
        w = csv.DictWriter(fh, fieldnames=list(reports[0].row()))
        w.writeheader()
        for r in reports:
            w.writerow(r.row())


def format_table(reports, key: str | None = None) -> str:
    """Fixed-width text table of reports, one line each."""
    head = f"{'':>12} {'return':>16} {'success':>8} {'any':>6} {'n':>5} {'h':>3} {'gamma':>6}"
    lines = [head]
    for r in reports:
        label = str(getattr(r, key)) if key else ("uniform" if r.goal is None else
                                                   ",".join(f"{v:g}" for v in r.goal))
        lines.append(f"{label:>12} {r.discounted_return:8.3f} ± {r.return_std:5.2f} "
                     f"{r.success_rate:8.3f} {r.any_step_success:6.3f} {r.n_episodes:5d} "
                     f"{r.eval_horizon:3d} {r.gamma:6.3f}")
    return "\n".join(lines)
