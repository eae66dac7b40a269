"""Numba switch.

Set ``CAUSALFUZZ_DISABLE_JIT=1`` to run the pure-numpy kernels instead of
the compiled ones (also used automatically when numba is missing).
"""
import os

JIT_DISABLED = os.environ.get("CAUSALFUZZ_DISABLE_JIT", "").strip().lower() in ("1", "true", "yes")

try:
    from numba import njit as _njit
    HAS_NUMBA = True
except ImportError:  # pragma: no cover
    HAS_NUMBA = False

USE_NUMBA = HAS_NUMBA and not JIT_DISABLED


def njit(fn):
    """``numba.njit(cache=True)`` when enabled, identity otherwise."""
    if USE_NUMBA:
        return _njit(cache=True)(fn)
    return fn
