"""Horizon-conditioned Gaussian goal policy and its behaviour-cloning trainers.

The policy maps [state, goal, embed(horizon)] through a ReLU MLP to a mean
(``action_scale * tanh``) and a standard deviation (``softplus + floor``).
Training maximises the log-likelihood of dataset actions under hindsight
relabelled goals. The GCSL baseline is the same network with the horizon
input zeroed and the standard deviation pinned to 1.
"""
from __future__ import annotations

import csv
import logging
import time
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import nn
from .dataset import Dataset
from .relabel import RelabelConfig, TrainBatch, sample_batch
from .rng import Rng, derive_seed

log = logging.getLogger(__name__)

SIGMA_FLOOR = 1e-3
MODES = ("merlin", "merlin_np", "merlin_p", "gcsl")


class TrainingDivergedError(FloatingPointError):
    pass


class GaussianPolicy:
    def __init__(self, state_dim: int = 2, goal_dim: int = 2, action_dim: int = 2,
                 hidden=(256, 256, 256), embed_dim: int = 32, max_period: int = 50,
                 action_scale: float = 1.0, horizon_conditioned: bool = True,
                 learn_std: bool = True, rng: Rng | None = None, dtype=np.float64,
                 net: nn.Mlp | None = None):
        self.state_dim, self.goal_dim, self.action_dim = state_dim, goal_dim, action_dim
        self.hidden = tuple(int(h) for h in hidden)
        self.embed_dim, self.max_period = int(embed_dim), int(max_period)
        self.action_scale = float(action_scale)
        self.horizon_conditioned = bool(horizon_conditioned)
        self.learn_std = bool(learn_std)
        dims = [state_dim + goal_dim + embed_dim, *self.hidden, 2 * action_dim]
        self.net = net if net is not None else nn.Mlp(dims, rng, dtype=dtype)
        if self.net.dims != dims:
            raise ValueError(f"network dims {self.net.dims} do not match policy layout {dims}")
        self._table = nn.sinusoidal_embed(np.arange(max_period + 1), embed_dim, max_period)

    @classmethod
    def gcsl(cls, **kwargs) -> "GaussianPolicy":
        return cls(horizon_conditioned=False, learn_std=False, **kwargs)

    @property
    def kind(self) -> str:
        return "merlin" if self.horizon_conditioned or self.learn_std else "gcsl"

    def meta(self) -> dict:
        return {"kind": "policy", "hidden": list(self.hidden), "embed_dim": self.embed_dim,
                "max_period": self.max_period, "action_scale": self.action_scale,
                "horizon_conditioned": self.horizon_conditioned, "learn_std": self.learn_std,
                "dims": [self.state_dim, self.goal_dim, self.action_dim]}

    @classmethod
    def from_checkpoint(cls, path, dtype=np.float64) -> "GaussianPolicy":
        nets, meta, _ = nn.load_checkpoint(path, dtype=dtype)
        if meta.get("kind") != "policy":
            raise nn.CheckpointFormatError("checkpoint does not hold a policy")
        sd, gd, ad = meta["dims"]
        return cls(sd, gd, ad, meta["hidden"], meta["embed_dim"], meta["max_period"],
                   meta["action_scale"], meta["horizon_conditioned"], meta["learn_std"],
                   net=nets["policy"])

    def save(self, path, adam: nn.AdamState | None = None, extra_meta: dict | None = None) -> None:
        meta = {**self.meta(), **(extra_meta or {})}
        nn.save_checkpoint(path, {"policy": self.net}, meta, {"policy": adam} if adam else None)

    def embed(self, h) -> np.ndarray:
        h = np.asarray(h)
        if np.any(h < 0):
            raise ValueError("horizon must be non-negative")
        if np.issubdtype(h.dtype, np.integer) and np.all(h <= self.max_period):
            return self._table[h]
        return nn.sinusoidal_embed(h, self.embed_dim, self.max_period)

    def features(self, s, g, h) -> np.ndarray:
        s = np.atleast_2d(np.asarray(s, dtype=np.float64))
        g = np.atleast_2d(np.asarray(g, dtype=np.float64))
        n = max(s.shape[0], g.shape[0])
        if self.horizon_conditioned:
            e = np.broadcast_to(self.embed(np.broadcast_to(np.asarray(h), (n,))), (n, self.embed_dim))
        else:
            e = np.zeros((n, self.embed_dim))
        s = np.broadcast_to(s, (n, s.shape[1]))
        g = np.broadcast_to(g, (n, g.shape[1]))
        return np.concatenate([s, g, e], axis=1).astype(self.net.dtype)

    def _heads(self, out):
        ad = self.action_dim
        th = np.tanh(out[:, :ad].astype(np.float64))
        mu = self.action_scale * th
        if self.learn_std:
            v = out[:, ad:].astype(np.float64)
            sigma = nn.softplus(v) + SIGMA_FLOOR
        else:
            v = None
            sigma = np.ones_like(mu)
        return mu, sigma, th, v

    def distribution(self, s, g, h):
        """Mean and standard deviation, each (n, action_dim)."""
        out, _ = self.net.forward(self.features(s, g, h))
        mu, sigma, _, _ = self._heads(out)
        return mu, sigma

    def act(self, s, g, h, mode: str = "mean", rng: Rng | None = None) -> np.ndarray:
        if np.any(np.asarray(h) < 1):
            raise ValueError("horizon must be >= 1")
        single = np.ndim(s) == 1
        mu, sigma = self.distribution(s, g, h)
        if mode == "mean":
            a = mu
        elif mode == "sample":
            rng = rng if rng is not None else Rng(0)
            a = np.clip(mu + sigma * rng.normal(mu.shape), -self.action_scale, self.action_scale)
        else:
            raise ValueError(f"unknown act mode {mode!r}")
        return a[0] if single else a

    def loss_and_grad(self, batch: TrainBatch):
        """Mean Gaussian NLL of the batch actions and its parameter gradients."""
        n = len(batch)
        if n == 0:
            raise ValueError("empty batch")
        x = self.features(batch.s, batch.g, batch.h)
        out, cache = self.net.forward(x)
        mu, sigma, th, v = self._heads(out)
        a = np.asarray(batch.a, dtype=np.float64)
        diff = a - mu
        inv_var = 1.0 / (sigma * sigma)
        per_row = np.sum(np.log(sigma) + 0.5 * diff * diff * inv_var, axis=1) \
            + 0.5 * self.action_dim * nn.LOG_2PI
        loss = float(per_row.mean())
        d_mu = -diff * inv_var / n
        d_out = np.zeros(out.shape, dtype=np.float64)
        d_out[:, :self.action_dim] = d_mu * self.action_scale * (1.0 - th * th)
        if self.learn_std:
            d_sigma = (1.0 / sigma - diff * diff * inv_var / sigma) / n
            d_out[:, self.action_dim:] = d_sigma * nn.sigmoid(v)
        grads, _ = self.net.backward(cache, d_out.astype(self.net.dtype))
        return loss, grads


def bc_loss(policy: GaussianPolicy, batch: TrainBatch):
    """Behaviour-cloning NLL with learned variance and horizon conditioning."""
    return policy.loss_and_grad(batch)


def gcsl_loss(policy: GaussianPolicy, batch: TrainBatch):
    """GCSL objective: same NLL with sigma fixed to 1 and no horizon input."""
    if policy.learn_std or policy.horizon_conditioned:
        raise ValueError("gcsl_loss needs a policy built with GaussianPolicy.gcsl()")
    return policy.loss_and_grad(batch)


# ------------------------------------------------------------------ training

@dataclass(frozen=True)
class TrainConfig:
    updates: int = 100_000
    batch_size: int = 512
    lr: float = 5e-4
    hindsight_ratio: float = 1.0
    mode: str = "merlin"
    eval_horizon: int = 1
    hidden: tuple = (256, 256, 256)
    embed_dim: int = 32
    precision: str = "float32"
    log_every: int = 100
    checkpoint_every: int = 0
    # merlin_np
    delta: float = 1e-6
    n_stitched: int = 500
    # merlin_p
    model_epochs: int = 100
    model_lr: float = 3e-4
    model_batch: int = 256
    n_rollouts: int = 2000
    synthetic_fraction: float = 0.5

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"unknown mode {self.mode!r}; choose from {MODES}")
        if self.updates < 0 or self.batch_size < 1 or self.lr <= 0:
            raise ValueError("updates >= 0, batch_size >= 1 and lr > 0 required")
        if self.precision not in ("float32", "float64"):
            raise ValueError("precision must be float32 or float64")
        if not 0.0 <= self.synthetic_fraction <= 1.0:
            raise ValueError("synthetic_fraction must lie in [0, 1]")
        RelabelConfig(self.hindsight_ratio)


@dataclass
class TrainResult:
    policy: GaussianPolicy
    adam: nn.AdamState
    log: list = field(default_factory=list)
    dataset: Dataset | None = None
    extras: dict = field(default_factory=dict)

    def write_log(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["update", "loss", "wall_time"])
            for row in self.log:
                w.writerow([row[0], repr(row[1]), f"{row[2]:.3f}"])


def _augment(dataset: Dataset, config: TrainConfig, seed: int):
    """Mode-specific data: (dataset to sample, synthetic dataset or None, extras)."""
    extras: dict = {}
    if config.mode == "merlin_np":
        from .neighbors import BallTree
        from .stitcher import StitchConfig, stitch, stitch_stats
        tree = BallTree.from_dataset(dataset)
        sc = StitchConfig(config.delta, config.n_stitched, derive_seed(seed, "stitch"))
        out = stitch(dataset, tree, sc)
        extras["stitch"] = stitch_stats(dataset, out)
        return out, None, extras
    if config.mode == "merlin_p":
        from .reverse_model import ReverseModelConfig, build_rollouts
        rc = ReverseModelConfig(epochs=config.model_epochs, lr=config.model_lr,
                                batch_size=config.model_batch, n_rollouts=config.n_rollouts,
                                precision=config.precision)
        synthetic, extras["reverse_model"] = build_rollouts(dataset, rc, derive_seed(seed, "reverse_model"))
        extras["rollouts"] = synthetic
        return dataset, synthetic, extras
    return dataset, None, extras


def train(dataset: Dataset, config: TrainConfig, seed: int, checkpoint_dir=None,
          policy: GaussianPolicy | None = None) -> TrainResult:
    """Run ``config.updates`` steps of relabel -> NLL -> Adam; deterministic in ``seed``."""
    spec = dataset.env_spec
    data, synthetic, extras = _augment(dataset, config, seed)
    dtype = np.float32 if config.precision == "float32" else np.float64
    if policy is None:
        kw = dict(state_dim=spec.state_dim, goal_dim=spec.goal_dim, action_dim=spec.action_dim,
                  hidden=config.hidden, embed_dim=config.embed_dim, max_period=spec.max_steps,
                  rng=Rng.derive(seed, "policy/init"), dtype=dtype)
        policy = GaussianPolicy.gcsl(**kw) if config.mode == "gcsl" else GaussianPolicy(**kw)
    adam = nn.AdamState(policy.net.params, lr=config.lr)
    batch_rng = Rng.derive(seed, "policy/batches")
    rc = RelabelConfig(config.hindsight_ratio, seed)
    n_syn = int(round(config.batch_size * config.synthetic_fraction)) if synthetic is not None else 0
    result = TrainResult(policy, adam, dataset=data, extras=extras)
    t0 = time.perf_counter()
    window: list[float] = []
    last_finite = None
    for update in range(1, config.updates + 1):
        if n_syn:
            batch = TrainBatch.concat([
                sample_batch(data, config.batch_size - n_syn, rc, batch_rng),
                sample_batch(synthetic, n_syn, rc, batch_rng)])
        else:
            batch = sample_batch(data, config.batch_size, rc, batch_rng)
        loss, grads = policy.loss_and_grad(batch)
        if not np.isfinite(loss):
            raise TrainingDivergedError(
                f"loss became {loss} at update {update}; last finite window mean {last_finite}")
        nn.adam_step(policy.net.params, grads, adam)
        window.append(loss)
        if update % config.log_every == 0 or update == config.updates:
            last_finite = float(np.mean(window))
            result.log.append((update, last_finite, time.perf_counter() - t0))
            window = []
        if checkpoint_dir and config.checkpoint_every and update % config.checkpoint_every == 0:
            policy.save(Path(checkpoint_dir) / f"policy_{update:07d}.ckpt", adam)
    log.info("trained %s for %d updates in %.1fs", config.mode, config.updates,
             time.perf_counter() - t0)
    return result


def with_updates(config: TrainConfig, updates: int) -> TrainConfig:
    return replace(config, updates=updates)
