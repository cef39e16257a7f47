"""Numba switch.

Kernels are compiled with numba when it is importable and the environment
variable ``CONDGRAD_NUMBA`` is not set to ``0``; otherwise the pure-numpy
twins in :mod:`condgrad._kernels` are used.
"""
import os

try:
    import numba
except ImportError:  # pragma: no cover
    numba = None


def _flag():
    return os.environ.get("CONDGRAD_NUMBA", "1").strip().lower() not in ("0", "false", "no", "off")


NUMBA_AVAILABLE = numba is not None
USE_NUMBA = NUMBA_AVAILABLE and _flag()


def njit(*args, **kwargs):
    """``numba.njit`` with caching, or a no-op decorator without numba."""
    if numba is None:
        if len(args) == 1 and callable(args[0]) and not kwargs:
            return args[0]
        return lambda fn: fn
    kwargs.setdefault("cache", True)
    return numba.njit(*args, **kwargs)
