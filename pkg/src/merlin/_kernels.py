"""Kernel dispatch: compiled extension when importable, pure Python otherwise.

Set ``MERLIN_PURE_PYTHON=1`` to force the fallback (used by the benchmark and
by the backend-equivalence tests).
"""
import os

from . import _fallback

try:
    if os.environ.get("MERLIN_PURE_PYTHON") == "1":
        raise ImportError("pure-python backend requested")
    from . import _core as _impl
    BACKEND = "compiled"
except ImportError:
    _impl = _fallback
    BACKEND = "python"

xoshiro_fill = _impl.xoshiro_fill
knn_query = _impl.knn_query

__all__ = ["BACKEND", "xoshiro_fill", "knn_query"]
