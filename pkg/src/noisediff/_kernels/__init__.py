"""Kernel backend selection.

The compiled Cython extension is preferred when importable; otherwise the
NumPy fallback is used. Set NOISEDIFF_PURE_PYTHON=1 to force the fallback
(useful for benchmarking and debugging).
"""
import os

import numpy as np

if os.environ.get("NOISEDIFF_PURE_PYTHON"):
    from . import fallback as backend
else:
    try:
        from . import _core as backend  # type: ignore[attr-defined]
    except ImportError:
        from . import fallback as backend

from . import fallback

IS_COMPILED = bool(getattr(backend, "IS_COMPILED", False))


def _c(a):
    return np.ascontiguousarray(np.asarray(a, dtype=float))


def linear_path(M, m, L, xi, x0, record_every):
    return backend.linear_path(_c(M), _c(m), _c(L), _c(xi), _c(x0), record_every)


def block_quad_logdet(a_stack, v, scale):
    return backend.block_quad_logdet(_c(a_stack), _c(v), float(scale))


__all__ = ["backend", "fallback", "IS_COMPILED", "linear_path", "block_quad_logdet"]
