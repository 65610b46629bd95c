"""Numba acceleration switch.

Hot kernels come in two flavours: an ``@njit`` loop version and a vectorised
numpy version.  Which one runs is decided at call time by :func:`use_numba`,
so the choice can be flipped with ``REGIME_ITER_DISABLE_JIT=1`` in the
environment or programmatically with :func:`set_backend` (tests use the
latter to run both paths against each other).
"""
from __future__ import annotations

import os
from contextlib import contextmanager

try:
    import numba as _numba
    from numba import njit as _njit

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    _numba = None
    HAVE_NUMBA = False

_TRUE = {"1", "true", "yes", "on"}
_enabled = HAVE_NUMBA and os.environ.get("REGIME_ITER_DISABLE_JIT", "0").lower() not in _TRUE


def njit(*args, **kwargs):
    """``numba.njit`` with caching on, or a no-op decorator without numba."""
    if HAVE_NUMBA:
        kwargs.setdefault("cache", True)
        return _njit(*args, **kwargs)
    if len(args) == 1 and callable(args[0]) and not kwargs:
        return args[0]
    return lambda f: f


def use_numba() -> bool:
    return _enabled


def backend() -> str:
    return "numba" if _enabled else "numpy"


def set_backend(name: str) -> None:
    global _enabled
    if name not in ("numba", "numpy"):
        raise ValueError(f"unknown backend {name!r}")
    if name == "numba" and not HAVE_NUMBA:
        raise RuntimeError("numba is not installed")
    _enabled = name == "numba"


@contextmanager
def backend_as(name: str):
    previous = backend()
    set_backend(name)
    try:
        yield
    finally:
        set_backend(previous)


_threads = 1


def set_threads(n: int | None) -> None:
    """Worker threads for chunked Monte Carlo.  Results never depend on the count."""
    global _threads
    if n is None:
        return
    if int(n) < 1:
        raise ValueError("thread count must be positive")
    _threads = int(n)


def threads() -> int:
    return _threads
