"""Numba switch for the hot kernels.

Set ``CLO_DISABLE_JIT=1`` to run every kernel as plain Python over numpy
arrays. Both paths execute the same source, so results are identical.
"""

from __future__ import annotations

import os

JIT_DISABLED = os.environ.get("CLO_DISABLE_JIT", "").strip().lower() in ("1", "true", "yes")

try:
    if JIT_DISABLED:
        raise ImportError
    from numba import njit as _numba_njit

    HAS_NUMBA = True
except ImportError:
    HAS_NUMBA = False


def njit(*args, **kwargs):
    """``numba.njit`` when available and enabled, identity decorator otherwise."""
    if HAS_NUMBA:
        kwargs.setdefault("cache", True)
        return _numba_njit(*args, **kwargs)
    if len(args) == 1 and callable(args[0]) and not kwargs:
        return args[0]

    def wrap(fn):
        return fn

    return wrap


def python_impl(fn):
    """The uncompiled function behind a kernel (for benchmarks and cross-checks)."""
    return getattr(fn, "py_func", fn)
