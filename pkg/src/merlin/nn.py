"""Small from-scratch neural network toolkit.

ReLU MLPs with hand-written backprop, sinusoidal embeddings, the diagonal
Gaussian negative log-likelihood, Adam, a finite-difference gradient checker
and a binary checkpoint format. Parameters are float64 by default; training
code may opt into float32 for speed.
"""
from __future__ import annotations

import json
import math
import struct
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .rng import Rng

LOG_2PI = math.log(2.0 * math.pi)


class NonFiniteGradientError(FloatingPointError):
    pass


class CheckpointFormatError(ValueError):
    pass


class Mlp:
    """Affine layers with ReLU between them and an identity output."""

    def __init__(self, dims: Sequence[int], rng: Rng | None = None, final_scale: float = 0.01,
                 dtype=np.float64):
        if len(dims) < 2 or any(int(d) < 1 for d in dims):
            raise ValueError(f"bad layer dims {dims}")
        self.dims = [int(d) for d in dims]
        self.dtype = np.dtype(dtype)
        rng = rng if rng is not None else Rng(0)
        self.weights, self.biases = [], []
        n_layers = len(self.dims) - 1
        for i, (fan_in, fan_out) in enumerate(zip(self.dims[:-1], self.dims[1:])):
            # Kaiming-uniform for ReLU; the output layer is shrunk
            bound = math.sqrt(6.0 / fan_in)
            if i == n_layers - 1:
                bound *= final_scale
            w = rng.uniform(-bound, bound, (fan_in, fan_out))
            self.weights.append(w.astype(self.dtype))
            self.biases.append(np.zeros(fan_out, dtype=self.dtype))

    @property
    def params(self) -> list[np.ndarray]:
        out = []
        for w, b in zip(self.weights, self.biases):
            out += [w, b]
        return out

    @property
    def n_params(self) -> int:
        return sum(p.size for p in self.params)

    def set_params(self, values: Sequence[np.ndarray]) -> None:
        for p, v in zip(self.params, values):
            if p.shape != np.shape(v):
                raise ValueError(f"parameter shape {np.shape(v)} != {p.shape}")
            p[...] = v

    def astype(self, dtype) -> "Mlp":
        out = Mlp.__new__(Mlp)
        out.dims = list(self.dims)
        out.dtype = np.dtype(dtype)
        out.weights = [w.astype(dtype) for w in self.weights]
        out.biases = [b.astype(dtype) for b in self.biases]
        return out

    def forward(self, x):
        """Returns (y, cache). Accepts a single vector or a (batch, in) matrix."""
        x = np.asarray(x, dtype=self.dtype)
        single = x.ndim == 1
        if single:
            x = x[None]
        if x.shape[1] != self.dims[0]:
            raise ValueError(f"input dim {x.shape[1]} != {self.dims[0]}")
        acts = [x]
        h = x
        last = len(self.weights) - 1
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            h = h @ w
            h += b
            if i < last:
                np.maximum(h, 0, out=h)
            acts.append(h)
        y = acts[-1][0] if single else acts[-1]
        return y, (acts, single)

    def __call__(self, x):
        return self.forward(x)[0]

    def backward(self, cache, dy, need_input_grad: bool = False):
        """Gradients of a scalar loss given dL/dy; returns (grads, dL/dx or None)."""
        acts, single = cache
        g = np.asarray(dy, dtype=self.dtype)
        if single:
            g = g[None]
        grads = [None] * (2 * len(self.weights))
        for i in range(len(self.weights) - 1, -1, -1):
            grads[2 * i] = acts[i].T @ g
            grads[2 * i + 1] = g.sum(axis=0)
            if i > 0 or need_input_grad:
                g = g @ self.weights[i].T
                if i > 0:
                    g *= acts[i] > 0
        dx = None
        if need_input_grad:
            dx = g[0] if single else g
        return grads, dx


def sinusoidal_embed(h, dim: int = 32, max_period: float = 50.0) -> np.ndarray:
    """[sin(h*f_i), cos(h*f_i)] with f_i = max_period**(-2i/dim), i < dim/2.

    ``h`` may be a scalar (returns shape (dim,)) or an array (adds a trailing axis).
    """
    if dim % 2:
        raise ValueError("embedding dim must be even")
    half = dim // 2
    freqs = max_period ** (-2.0 * np.arange(half) / dim)
    arg = np.asarray(h, dtype=np.float64)[..., None] * freqs
    return np.concatenate([np.sin(arg), np.cos(arg)], axis=-1)


def softplus(x):
    return np.logaddexp(0.0, x)


def sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def gaussian_nll(a, mu, sigma):
    """-log N(a; mu, diag(sigma^2)), summed over the last axis."""
    a, mu, sigma = (np.asarray(v, dtype=np.float64) for v in (a, mu, sigma))
    if a.shape != mu.shape or a.shape != sigma.shape:
        raise ValueError("a, mu and sigma must have the same shape")
    if np.any(sigma <= 0):
        raise ValueError("sigma must be strictly positive")
    z = (a - mu) / sigma
    out = np.sum(np.log(sigma) + 0.5 * z * z, axis=-1) + 0.5 * a.shape[-1] * LOG_2PI
    return float(out) if np.ndim(out) == 0 else out


class AdamState:
    def __init__(self, params: Sequence[np.ndarray], lr: float = 5e-4, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]
        self.step = 0


def adam_step(params: Sequence[np.ndarray], grads: Sequence[np.ndarray], state: AdamState) -> None:
    """Bias-corrected Adam update, in place. Non-finite gradients abort untouched."""
    if len(params) != len(grads) or any(p.shape != g.shape for p, g in zip(params, grads)):
        raise ValueError("parameter and gradient shapes differ")
    for g in grads:
        if not np.all(np.isfinite(g)):
            raise NonFiniteGradientError("non-finite gradient; update rejected")
    state.step += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** state.step
    c2 = 1.0 - b2 ** state.step
    for p, g, m, v in zip(params, grads, state.m, state.v):
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        p -= state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)


def grad_check(loss_and_grad: Callable[[], tuple[float, list]], params: Sequence[np.ndarray],
               n_checks: int = 20, step: float = 1e-4, rng: Rng | None = None,
               floor: float = 1e-6) -> float:
    """Max relative error between analytic and central-difference gradients.

    ``loss_and_grad`` must read ``params`` in place. Up to ``n_checks`` entries
    per tensor are probed. An entry whose difference quotient changes with the
    step size sits on a ReLU kink; it is nudged to a nearby point and retried.
    The relative error is |analytic - numeric| / max(|analytic|, |numeric|, floor).
    """
    rng = rng if rng is not None else Rng(0)
    worst = 0.0

    def loss() -> float:
        return float(loss_and_grad()[0])

    def diffs(flat, j, h):
        """(central difference, forward minus backward one-sided difference)."""
        orig = flat[j]
        f0 = loss()
        flat[j] = orig + h
        fp = loss()
        flat[j] = orig - h
        fm = loss()
        flat[j] = orig
        return (fp - fm) / (2 * h), ((fp - f0) - (f0 - fm)) / h

    def smooth(flat, j):
        num, asym = diffs(flat, j, step)
        num_half, asym_half = diffs(flat, j, step / 2)
        scale = max(abs(num), abs(num_half), floor)
        if abs(num - num_half) > 1e-5 * scale:
            return None
        # the one-sided gap shrinks with the step on smooth functions only;
        # a kink exactly at the probe point keeps it constant
        if abs(asym) > 1e-6 * scale and abs(asym_half) > 0.75 * abs(asym):
            return None
        return num

    for pi, p in enumerate(params):
        flat = p.reshape(-1)
        picks = np.unique(rng.integers(flat.size, min(n_checks, flat.size)))
        for j in picks:
            for _ in range(5):
                num = smooth(flat, j)
                if num is not None:
                    break
                flat[j] += rng.uniform(-20 * step, 20 * step)
            else:
                continue
            ana = float(np.asarray(loss_and_grad()[1][pi]).reshape(-1)[j])
            err = abs(ana - num) / max(abs(ana), abs(num), floor)
            worst = max(worst, err)
    return worst


# --------------------------------------------------------------- checkpoints

CKPT_MAGIC = b"MRLW"
CKPT_VERSION = 1


def _blob(arrays) -> bytes:
    return b"".join(np.asarray(a).astype("<f4").tobytes() for a in arrays)


def checkpoint_bytes(nets: dict[str, Mlp], meta: dict | None = None,
                     adam: dict[str, AdamState] | None = None) -> bytes:
    """Serialise named networks (and optionally their Adam state)."""
    meta = dict(meta or {})
    meta["nets"] = list(nets)
    raw = json.dumps(meta, sort_keys=True).encode()
    parts = [CKPT_MAGIC, struct.pack("<I", CKPT_VERSION), struct.pack("<I", len(raw)), raw,
             struct.pack("<I", len(nets))]
    for net in nets.values():
        parts.append(struct.pack("<I", len(net.dims)))
        parts.append(struct.pack(f"<{len(net.dims)}I", *net.dims))
        parts.append(_blob(net.params))
    if adam:
        parts.append(struct.pack("<B", 1))
        for name in nets:
            st = adam[name]
            parts.append(struct.pack("<Q", st.step))
            parts.append(struct.pack("<4d", st.lr, st.beta1, st.beta2, st.eps))
            parts.append(_blob(st.m) + _blob(st.v))
    else:
        parts.append(struct.pack("<B", 0))
    return b"".join(parts)


def save_checkpoint(path, nets, meta=None, adam=None) -> None:
    Path(path).write_bytes(checkpoint_bytes(nets, meta, adam))


def load_checkpoint(path, dtype=np.float64):
    """Returns (nets, meta, adam_states_or_None)."""
    buf = Path(path).read_bytes() if not isinstance(path, (bytes, bytearray)) else bytes(path)
    pos = 0

    def take(n):
        nonlocal pos
        if pos + n > len(buf):
            raise CheckpointFormatError("checkpoint truncated")
        out = buf[pos:pos + n]
        pos += n
        return out

    def unpack(fmt):
        return struct.unpack(fmt, take(struct.calcsize(fmt)))

    if take(4) != CKPT_MAGIC:
        raise CheckpointFormatError("bad magic bytes: not a checkpoint")
    (version,) = unpack("<I")
    if version != CKPT_VERSION:
        raise CheckpointFormatError(f"unsupported checkpoint version {version}")
    (n_meta,) = unpack("<I")
    meta = json.loads(take(n_meta).decode())
    (n_nets,) = unpack("<I")
    names = meta.get("nets", [f"net{i}" for i in range(n_nets)])
    if len(names) != n_nets:
        raise CheckpointFormatError("network count does not match metadata")

    def floats(shape):
        n = int(np.prod(shape))
        return np.frombuffer(take(4 * n), dtype="<f4").reshape(shape).astype(dtype)

    nets = {}
    for name in names:
        (n_dims,) = unpack("<I")
        dims = list(unpack(f"<{n_dims}I"))
        net = Mlp.__new__(Mlp)
        net.dims, net.dtype = dims, np.dtype(dtype)
        net.weights, net.biases = [], []
        for fi, fo in zip(dims[:-1], dims[1:]):
            net.weights.append(floats((fi, fo)))
            net.biases.append(floats((fo,)))
        nets[name] = net
    (has_adam,) = unpack("<B")
    adam = None
    if has_adam:
        adam = {}
        for name in names:
            (step,) = unpack("<Q")
            lr, b1, b2, eps = unpack("<4d")
            st = AdamState(nets[name].params, lr, b1, b2, eps)
            st.step = step
            st.m = [floats(p.shape) for p in nets[name].params]
            st.v = [floats(p.shape) for p in nets[name].params]
            adam[name] = st
    if pos != len(buf):
        raise CheckpointFormatError("trailing bytes after checkpoint")
    return nets, meta, adam
