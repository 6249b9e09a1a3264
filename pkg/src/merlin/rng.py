"""Platform-independent random numbers: splitmix64-seeded xoshiro256++.

Every random draw in the toolkit goes through :class:`Rng`, and every stream
is derived from one top-level seed plus a purpose string, so results depend
only on (seed, purpose) and not on call order elsewhere in the program.
"""
from __future__ import annotations

import hashlib
import math

import numpy as np

from ._kernels import xoshiro_fill

_MASK = (1 << 64) - 1
_INV_2_53 = 1.0 / (1 << 53)


def splitmix64(x: int) -> tuple[int, int]:
    """One splitmix64 step; returns (new_state, output)."""
    x = (x + 0x9E3779B97F4A7C15) & _MASK
    z = x
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK
    return x, z ^ (z >> 31)


def derive_seed(seed: int, purpose: str) -> int:
    """Named child seed: first 8 bytes of sha256("<seed>:<purpose>")."""
    digest = hashlib.sha256(f"{int(seed)}:{purpose}".encode()).digest()
    return int.from_bytes(digest[:8], "little")


def _size(size) -> tuple[int, tuple[int, ...]]:
    if size is None:
        return 1, ()
    shape = (size,) if isinstance(size, (int, np.integer)) else tuple(size)
    return math.prod(shape), shape


class Rng:
    """xoshiro256++ generator with a small numpy-flavoured API."""

    def __init__(self, seed: int, *, state=None):
        self.seed = int(seed) & _MASK
        if state is not None:
            self.state = np.array(state, dtype=np.uint64)
            return
        x = self.seed
        words = []
        for _ in range(4):
            x, out = splitmix64(x)
            words.append(out)
        self.state = np.array(words, dtype=np.uint64)

    @classmethod
    def derive(cls, seed: int, purpose: str) -> "Rng":
        return cls(derive_seed(seed, purpose))

    def spawn(self, purpose: str) -> "Rng":
        """Child stream keyed on this generator's seed, independent of its state."""
        return Rng.derive(self.seed, purpose)

    def uint64(self, n: int) -> np.ndarray:
        return xoshiro_fill(self.state, int(n))

    def random(self, size=None):
        n, shape = _size(size)
        u = (self.uint64(n) >> np.uint64(11)).astype(np.float64) * _INV_2_53
        return float(u[0]) if size is None else u.reshape(shape)

    def uniform(self, low=0.0, high=1.0, size=None):
        u = self.random(size)
        return low + (high - low) * u

    def integers(self, high, size=None):
        """Integers in [0, high); ``high`` may be an array broadcast against ``size``."""
        u = self.random(size)
        out = np.floor(np.asarray(u) * high).astype(np.int64)
        out = np.minimum(out, np.asarray(high, dtype=np.int64) - 1)
        return int(out) if size is None and np.ndim(high) == 0 else out

    def normal(self, size=None):
        """Standard normals by Box-Muller."""
        n, shape = _size(size)
        m = (n + 1) // 2
        u = self.random(2 * m)
        r = np.sqrt(-2.0 * np.log1p(-u[:m]))
        theta = 2.0 * np.pi * u[m:]
        z = np.concatenate([r * np.cos(theta), r * np.sin(theta)])[:n]
        return float(z[0]) if size is None else z.reshape(shape)
