"""Finite-difference gradient checks on small random instances of every loss."""
from __future__ import annotations

import numpy as np

from . import nn
from .policy import GaussianPolicy, bc_loss, gcsl_loss
from .relabel import TrainBatch
from .reverse_model import ReverseCvae, ReverseDynamics
from .rng import Rng

LOSSES = ("bc_loss", "gcsl_loss", "dynamics_loss", "cvae_loss")


def _batch(rng: Rng, n: int) -> TrainBatch:
    h = 1 + rng.integers(50, n)
    z = np.zeros(n, dtype=np.int64)
    return TrainBatch(s=rng.uniform(-5, 5, (n, 2)), a=rng.uniform(-0.95, 0.95, (n, 2)),
                      g=rng.uniform(-5, 5, (n, 2)), h=h, relabeled=np.ones(n, dtype=bool),
                      traj=z, t=z, future=h)


def check_instance(name: str, seed: int, n: int = 8, hidden: int = 16) -> float:
    """Max relative gradient error of loss ``name`` on one random float64 instance."""
    rng = Rng.derive(seed, f"gradcheck/{name}")
    probe = rng.spawn("probe")
    if name in ("bc_loss", "gcsl_loss"):
        make = GaussianPolicy if name == "bc_loss" else GaussianPolicy.gcsl
        pol = make(hidden=(hidden, hidden), embed_dim=8, rng=rng.spawn("init"))
        # scale up the output layer so the heads are away from their init regime
        pol.net.weights[-1] *= 50.0
        batch = _batch(rng, n)
        fn = bc_loss if name == "bc_loss" else gcsl_loss
        return nn.grad_check(lambda: fn(pol, batch), pol.net.params, rng=probe)
    if name == "dynamics_loss":
        dyn = ReverseDynamics(hidden=(hidden,) * 3, rng=rng.spawn("init"))
        dyn.net.weights[-1] *= 50.0
        s = rng.uniform(-5, 5, (n, 2))
        a = rng.uniform(-1, 1, (n, 2))
        s_next = s + a
        return nn.grad_check(lambda: dyn.loss_and_grad(s, a, s_next), dyn.net.params, rng=probe)
    if name == "cvae_loss":
        cvae = ReverseCvae(hidden=(hidden, hidden), rng=rng.spawn("init"))
        # keep log-std moderate: exp(2 * log_std) in the KL dominates otherwise
        cvae.encoder.weights[-1] *= 5.0
        cvae.decoder.weights[-1] *= 50.0
        s_next = rng.uniform(-5, 5, (n, 2))
        a = rng.uniform(-0.95, 0.95, (n, 2))
        eps = rng.normal((n, cvae.latent_dim))
        n_enc = len(cvae.encoder.params)

        def loss_and_grad():
            loss, g_enc, g_dec, _ = cvae.loss_and_grad(s_next, a, eps)
            return loss, g_enc + g_dec

        params = cvae.encoder.params + cvae.decoder.params
        assert len(params) == n_enc + len(cvae.decoder.params)
        return nn.grad_check(loss_and_grad, params, rng=probe)
    raise ValueError(f"unknown loss {name!r}; choose from {LOSSES}")


def run_grad_checks(n_instances: int = 50, seed: int = 0, losses=LOSSES) -> dict[str, float]:
    """Worst relative error per loss over ``n_instances`` random instances."""
    return {name: max(check_instance(name, seed * 1_000_003 + i) for i in range(n_instances))
            for name in losses}
