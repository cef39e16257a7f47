"""Dense linear-algebra primitives: softmin, power iteration and the
Euclidean projection onto the unit simplex.

Random draws go through ``numpy.random.default_rng`` (PCG64 seeded through
``SeedSequence``), so a seed may be an int or a tuple of ints; tuples are how
callers derive independent per-iteration streams from one run seed.
"""
from dataclasses import dataclass

import numpy as np

from . import _kernels
from .errors import DegenerateMatrixError, InvalidArgumentError

MAX_RESTARTS = 3


@dataclass(frozen=True)
class SingularPair:
    u: np.ndarray
    v: np.ndarray
    sigma_est: float


def as_vector(z, name="vector"):
    z = np.asarray(z, dtype=np.float64)
    if z.ndim != 1:
        raise InvalidArgumentError(f"{name} must be 1-D, got shape {z.shape}")
    if not np.all(np.isfinite(z)):
        raise InvalidArgumentError(f"{name} has non-finite entries")
    return z


def as_matrix(a, name="matrix"):
    a = np.asarray(a, dtype=np.float64)
    if a.ndim != 2:
        raise InvalidArgumentError(f"{name} must be 2-D, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise InvalidArgumentError(f"{name} has non-finite entries")
    return a


def softmin(z, beta):
    """Return ``exp(-beta*z) / sum(exp(-beta*z))``.

    The minimum of ``z`` is subtracted before exponentiating, so large
    ``beta`` saturates towards the argmin vertex instead of overflowing.
    """
    z = as_vector(z, "z")
    if z.size == 0:
        raise InvalidArgumentError("z is empty")
    if not (np.isfinite(beta) and beta > 0):
        raise InvalidArgumentError(f"beta must be positive and finite, got {beta}")
    return _kernels.softmin(z, float(beta))


def project_simplex(v):
    """Euclidean projection onto ``{x >= 0, sum(x) = 1}`` (sort and threshold)."""
    v = as_vector(v, "v")
    if v.size == 0:
        raise InvalidArgumentError("cannot project an empty vector")
    x = _kernels.project_simplex(v)
    # v - theta cancels badly for large entries; restore the unit sum
    return x / x.sum()


def unit_sphere_sample(dim, rng):
    while True:
        x = rng.standard_normal(dim)
        norm = np.linalg.norm(x)
        if norm > 0.0:
            return x / norm


def _fix_sign(u, v):
    # Flip jointly so the first non-negligible entry of u is positive.
    idx = np.flatnonzero(np.abs(u) > 1e-12)
    if idx.size and u[idx[0]] < 0.0:
        return -u, -v
    return u, v


def power_iteration(a, k, seed):
    """Top singular pair of ``a`` by ``k`` rounds of alternating power iteration.

    Starts from ``v`` drawn uniformly on the unit sphere, then repeats
    ``u <- a v / |a v|``, ``v <- a^T u / |a^T u|``. ``sigma_est = u^T a v``.
    A vanishing intermediate product restarts from a fresh draw, at most
    ``MAX_RESTARTS`` times.
    """
    a = as_matrix(a, "A")
    if k < 1:
        raise InvalidArgumentError(f"k must be >= 1, got {k}")
    if a.size == 0 or not np.any(a):
        raise DegenerateMatrixError("power iteration on a zero matrix")
    rng = np.random.default_rng(seed)
    for _ in range(MAX_RESTARTS + 1):
        v0 = unit_sphere_sample(a.shape[1], rng)
        u, v, sigma, ok = _kernels.power_iteration(a, v0, int(k))
        if ok:
            u, v = _fix_sign(u, v)
            return SingularPair(u, v, float(sigma))
    raise DegenerateMatrixError(
        f"power iteration produced a zero product after {MAX_RESTARTS} restarts"
    )
