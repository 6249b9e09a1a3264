"""Reverse dynamics model, CVAE reverse policy and backward model rollouts.

The dynamics net predicts the previous state from (next state, action); it is
parameterised as next state plus a learned correction. The CVAE encodes
(next state, action) into a Gaussian latent with twice the action dimension
and decodes (next state, latent) into a bounded action. Rollouts start at
dataset final states and alternate decoder and dynamics steps backward.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from . import nn
from .dataset import Dataset, Trajectory
from .env import phi
from .rng import Rng

log = logging.getLogger(__name__)

LOG_STD_MIN, LOG_STD_MAX = -4.0, 15.0


class ModelDivergedError(FloatingPointError):
    pass


@dataclass(frozen=True)
class ReverseModelConfig:
    epochs: int = 100
    lr: float = 3e-4
    batch_size: int = 256
    n_rollouts: int = 2000
    rollout_steps: int | None = None
    precision: str = "float32"


def transitions(dataset: Dataset):
    """(s, a, s') arrays over every stored transition."""
    flat = dataset.flat
    k = np.arange(flat.n_transitions)
    traj = np.searchsorted(flat.action_offset, k, side="right") - 1
    s_idx = flat.state_offset[traj] + (k - flat.action_offset[traj])
    return flat.states[s_idx], flat.actions, flat.states[s_idx + 1]


def _dtype(precision: str):
    return np.float32 if precision == "float32" else np.float64


class ReverseDynamics:
    def __init__(self, state_dim: int = 2, action_dim: int = 2, hidden=(256, 256, 256),
                 rng: Rng | None = None, dtype=np.float64, net: nn.Mlp | None = None):
        self.state_dim, self.action_dim = state_dim, action_dim
        self.net = net if net is not None else nn.Mlp(
            [state_dim + action_dim, *hidden, state_dim], rng, dtype=dtype)

    def predict(self, s_next, a) -> np.ndarray:
        x = np.concatenate([np.atleast_2d(s_next), np.atleast_2d(a)], axis=1)
        out = self.net(x.astype(self.net.dtype)).astype(np.float64)
        return np.atleast_2d(s_next).astype(np.float64) + out

    def loss_and_grad(self, s, a, s_next):
        """Mean squared error ||s - f(s', a)||^2 and its gradients."""
        n = s.shape[0]
        x = np.concatenate([s_next, a], axis=1).astype(self.net.dtype)
        out, cache = self.net.forward(x)
        err = np.asarray(s_next, dtype=np.float64) + out.astype(np.float64) - s
        loss = float(np.mean(np.sum(err * err, axis=1)))
        grads, _ = self.net.backward(cache, (2.0 * err / n).astype(self.net.dtype))
        return loss, grads

    def save(self, path) -> None:
        nn.save_checkpoint(path, {"dynamics": self.net},
                           {"kind": "reverse_dynamics", "dims": [self.state_dim, self.action_dim]})

    @classmethod
    def load(cls, path, dtype=np.float64) -> "ReverseDynamics":
        nets, meta, _ = nn.load_checkpoint(path, dtype)
        sd, ad = meta["dims"]
        return cls(sd, ad, net=nets["dynamics"])


class ReverseCvae:
    def __init__(self, state_dim: int = 2, action_dim: int = 2, hidden=(256, 256),
                 action_scale: float = 1.0, rng: Rng | None = None, dtype=np.float64,
                 encoder: nn.Mlp | None = None, decoder: nn.Mlp | None = None):
        self.state_dim, self.action_dim = state_dim, action_dim
        self.latent_dim = 2 * action_dim
        self.action_scale = float(action_scale)
        rng = rng if rng is not None else Rng(0)
        self.encoder = encoder if encoder is not None else nn.Mlp(
            [state_dim + action_dim, *hidden, 2 * self.latent_dim], rng.spawn("encoder"), dtype=dtype)
        self.decoder = decoder if decoder is not None else nn.Mlp(
            [state_dim + self.latent_dim, *hidden, action_dim], rng.spawn("decoder"), dtype=dtype)

    def encode(self, s_next, a):
        x = np.concatenate([s_next, a], axis=1).astype(self.encoder.dtype)
        out, cache = self.encoder.forward(x)
        out = out.astype(np.float64)
        mu = out[:, :self.latent_dim]
        raw = out[:, self.latent_dim:]
        log_std = np.clip(raw, LOG_STD_MIN, LOG_STD_MAX)
        return mu, log_std, raw, cache

    def decode(self, s_next, z):
        x = np.concatenate([np.atleast_2d(s_next), np.atleast_2d(z)], axis=1)
        out, cache = self.decoder.forward(x.astype(self.decoder.dtype))
        th = np.tanh(out.astype(np.float64))
        return self.action_scale * th, th, cache

    @staticmethod
    def kl(mu, log_std) -> np.ndarray:
        """KL(N(mu, exp(log_std)^2) || N(0, I)) per row."""
        return np.sum(0.5 * (mu * mu + np.exp(2.0 * log_std) - 1.0) - log_std, axis=1)

    def loss_and_grad(self, s_next, a, eps):
        """Reconstruction + KL loss for fixed reparameterisation noise ``eps``.

        Returns (loss, encoder_grads, decoder_grads, mean_kl).
        """
        n = s_next.shape[0]
        mu, log_std, raw, enc_cache = self.encode(s_next, a)
        std = np.exp(log_std)
        z = mu + std * eps
        a_hat, th, dec_cache = self.decode(s_next, z)
        diff = a_hat - a
        kl = self.kl(mu, log_std)
        loss = float(np.mean(np.sum(diff * diff, axis=1) + kl))
        d_out = (2.0 * diff / n) * self.action_scale * (1.0 - th * th)
        dec_grads, dx = self.decoder.backward(dec_cache, d_out.astype(self.decoder.dtype),
                                              need_input_grad=True)
        dz = dx[:, self.state_dim:].astype(np.float64)
        d_mu = dz + mu / n
        d_log_std = dz * std * eps + (std * std - 1.0) / n
        d_log_std *= (raw >= LOG_STD_MIN) & (raw <= LOG_STD_MAX)
        enc_grads, _ = self.encoder.backward(
            enc_cache, np.concatenate([d_mu, d_log_std], axis=1).astype(self.encoder.dtype))
        return loss, enc_grads, dec_grads, float(kl.mean())

    def sample_action(self, s_next, rng: Rng) -> np.ndarray:
        s_next = np.atleast_2d(s_next)
        z = rng.normal((s_next.shape[0], self.latent_dim))
        return self.decode(s_next, z)[0]

    def save(self, path) -> None:
        nn.save_checkpoint(path, {"encoder": self.encoder, "decoder": self.decoder},
                           {"kind": "reverse_cvae", "dims": [self.state_dim, self.action_dim],
                            "action_scale": self.action_scale})

    @classmethod
    def load(cls, path, dtype=np.float64) -> "ReverseCvae":
        nets, meta, _ = nn.load_checkpoint(path, dtype)
        sd, ad = meta["dims"]
        return cls(sd, ad, action_scale=meta["action_scale"],
                   encoder=nets["encoder"], decoder=nets["decoder"])


def _epochs(n: int, epochs: int, batch_size: int, rng: Rng):
    for _ in range(epochs):
        perm = np.argsort(rng.random(n), kind="stable")
        for i in range(0, n, batch_size):
            yield perm[i:i + batch_size]


def train_dynamics(dataset: Dataset, epochs: int = 100, lr: float = 3e-4, batch: int = 256,
                   seed: int = 0, precision: str = "float32") -> tuple[ReverseDynamics, list]:
    """Fit the reverse dynamics model; returns (model, per-epoch mean losses)."""
    if dataset.n_transitions == 0:
        raise ValueError("dataset has no transitions")
    spec = dataset.env_spec
    model = ReverseDynamics(spec.state_dim, spec.action_dim,
                            rng=Rng.derive(seed, "dynamics/init"), dtype=_dtype(precision))
    s, a, s_next = transitions(dataset)
    adam = nn.AdamState(model.net.params, lr=lr)
    rng = Rng.derive(seed, "dynamics/batches")
    per_epoch = max(1, -(-s.shape[0] // batch))
    history, acc = [], []
    for i, idx in enumerate(_epochs(s.shape[0], epochs, batch, rng), 1):
        loss, grads = model.loss_and_grad(s[idx], a[idx], s_next[idx])
        if not np.isfinite(loss):
            raise ModelDivergedError(f"reverse dynamics loss became {loss} at batch {i}")
        nn.adam_step(model.net.params, grads, adam)
        acc.append(loss)
        if i % per_epoch == 0:
            history.append(float(np.mean(acc)))
            acc = []
    return model, history


def train_cvae(dataset: Dataset, epochs: int = 100, lr: float = 3e-4, batch: int = 256,
               seed: int = 0, precision: str = "float32") -> tuple[ReverseCvae, list]:
    """Fit the reverse-policy CVAE; returns (model, per-epoch (loss, kl) means)."""
    if dataset.n_transitions == 0:
        raise ValueError("dataset has no transitions")
    spec = dataset.env_spec
    model = ReverseCvae(spec.state_dim, spec.action_dim, rng=Rng.derive(seed, "cvae/init"),
                        dtype=_dtype(precision))
    _, a, s_next = transitions(dataset)
    enc_adam = nn.AdamState(model.encoder.params, lr=lr)
    dec_adam = nn.AdamState(model.decoder.params, lr=lr)
    rng = Rng.derive(seed, "cvae/batches")
    noise = Rng.derive(seed, "cvae/noise")
    per_epoch = max(1, -(-a.shape[0] // batch))
    history, acc = [], []
    for i, idx in enumerate(_epochs(a.shape[0], epochs, batch, rng), 1):
        eps = noise.normal((idx.shape[0], model.latent_dim))
        loss, g_enc, g_dec, kl = model.loss_and_grad(s_next[idx], a[idx], eps)
        if not np.isfinite(loss):
            raise ModelDivergedError(f"CVAE loss became {loss} at batch {i}")
        if kl < 0:
            raise ModelDivergedError(f"negative KL {kl} at batch {i}")
        nn.adam_step(model.encoder.params, g_enc, enc_adam)
        nn.adam_step(model.decoder.params, g_dec, dec_adam)
        acc.append((loss, kl))
        if i % per_epoch == 0:
            history.append(tuple(np.mean(acc, axis=0)))
            acc = []
    return model, history


def reverse_rollout(dyn: ReverseDynamics, cvae: ReverseCvae, start_states, steps: int,
                    rng: Rng, spec) -> Dataset:
    """Backward model rollouts from ``start_states``, emitted in forward order.

    A rollout stops early once any coordinate leaves the arena by more than
    twice its diameter.
    """
    starts = np.atleast_2d(np.asarray(start_states, dtype=np.float64))
    n = starts.shape[0]
    limit = 2.0 * spec.diameter
    lo, hi = spec.low - limit, spec.high + limit
    states = [starts]
    actions = []
    alive = np.ones(n, dtype=bool)
    length = np.zeros(n, dtype=np.int64)
    cur = starts
    for _ in range(steps):
        a = cvae.sample_action(cur, rng)
        prev = dyn.predict(cur, a)
        ok = alive & np.all(np.isfinite(prev), axis=1) & np.all((prev >= lo) & (prev <= hi), axis=1)
        length += ok
        alive = ok
        actions.append(a)
        states.append(prev)
        cur = np.where(alive[:, None], prev, cur)
        if not np.any(alive):
            break
    S = np.stack(states, axis=1)
    A = np.stack(actions, axis=1) if actions else np.zeros((n, 0, spec.action_dim))
    if np.any(length < steps):
        log.info("divergence guard truncated %d of %d rollouts", int(np.sum(length < steps)), n)
    trajs = []
    for i in range(n):
        L = int(length[i])
        trajs.append(Trajectory(S[i, :L + 1][::-1], A[i, :L][::-1], phi(starts[i])))
    return Dataset(trajs, spec, "model_rollout", 0)


def build_rollouts(dataset: Dataset, config: ReverseModelConfig, seed: int):
    """Train both reverse models on ``dataset`` and roll them out from its final states."""
    spec = dataset.env_spec
    dyn, dyn_hist = train_dynamics(dataset, config.epochs, config.lr, config.batch_size,
                                   Rng.derive(seed, "dynamics").seed, config.precision)
    cvae, cvae_hist = train_cvae(dataset, config.epochs, config.lr, config.batch_size,
                                 Rng.derive(seed, "cvae").seed, config.precision)
    rng = Rng.derive(seed, "rollout")
    flat = dataset.flat
    finals = flat.states[flat.state_offset + flat.lengths]
    pick = rng.integers(len(dataset), config.n_rollouts)
    steps = config.rollout_steps if config.rollout_steps is not None else spec.max_steps
    rollouts = reverse_rollout(dyn, cvae, finals[pick], steps, rng.spawn("steps"), spec)
    rollouts.seed = seed
    info = {"dynamics": dyn, "cvae": cvae, "dynamics_loss": dyn_hist, "cvae_loss": cvae_hist}
    return rollouts, info
