"""Linear-minimization oracles for the unit simplex and the trace-norm ball,
plus the atom-backed iterate used on the trace-norm ball.

An LMO object is called as ``lmo(grad, t)`` where ``t`` is the iteration
index, and exposes ``exact`` telling the FW loop whether its duality gap is a
valid certificate.
"""
import math
from dataclasses import dataclass

import numpy as np

from .errors import InvalidArgumentError
from .linalg import as_matrix, as_vector, power_iteration, softmin


@dataclass(frozen=True)
class Rank1Atom:
    coefficient: float
    u: np.ndarray
    v: np.ndarray

    def dense(self):
        return self.coefficient * np.outer(self.u, self.v)

    def inner(self, g):
        """Frobenius inner product with ``g``."""
        return self.coefficient * float(self.u @ g @ self.v)


class TraceNormPoint:
    """Matrix iterate in the trace-norm ball of radius ``tau``.

    Kept both dense and as a list of rank-1 atoms ``c_j u_j v_j^T``;
    ``sum |c_j|`` bounds the nuclear norm. ``fw_update`` mutates in place.
    """

    def __init__(self, dense, tau, coefs=(), us=(), vs=()):
        self.dense = np.array(dense, dtype=np.float64)
        self.tau = float(tau)
        self.coefs = np.asarray(coefs, dtype=np.float64).copy()
        self.us = list(us)
        self.vs = list(vs)

    @classmethod
    def zeros(cls, rows, cols, tau):
        if tau <= 0:
            raise InvalidArgumentError(f"tau must be positive, got {tau}")
        return cls(np.zeros((rows, cols)), tau)

    @property
    def shape(self):
        return self.dense.shape

    def copy(self):
        return TraceNormPoint(self.dense, self.tau, self.coefs, self.us, self.vs)

    @property
    def n_atoms(self):
        return len(self.us)

    def atom_norm_bound(self):
        return float(np.abs(self.coefs).sum())

    def reconstruct(self):
        out = np.zeros_like(self.dense)
        for c, u, v in zip(self.coefs, self.us, self.vs):
            out += c * np.outer(u, v)
        return out

    def atoms(self):
        return [Rank1Atom(float(c), u, v) for c, u, v in zip(self.coefs, self.us, self.vs)]

    def fw_update(self, gamma, atom):
        self.dense *= 1.0 - gamma
        self.dense += (gamma * atom.coefficient) * np.outer(atom.u, atom.v)
        keep = self.coefs * (1.0 - gamma) != 0.0
        self.coefs = np.append((self.coefs * (1.0 - gamma))[keep], gamma * atom.coefficient)
        self.us = [u for u, k in zip(self.us, keep) if k] + [atom.u]
        self.vs = [v for v, k in zip(self.vs, keep) if k] + [atom.v]
        return self


def simplex_lmo_exact(grad):
    """Vertex ``e_i`` with ``i`` the lowest index minimizing ``grad``."""
    grad = as_vector(grad, "grad")
    s = np.zeros_like(grad)
    s[int(np.argmin(grad))] = 1.0
    return s


def simplex_lmo_softmin(grad, beta):
    return softmin(grad, beta)


def tracenorm_lmo(grad, tau, k, seed):
    """Rank-1 minimizer ``-tau * u1 v1^T`` of ``<s, grad>`` over the ball."""
    grad = as_matrix(grad, "grad")
    if tau <= 0:
        raise InvalidArgumentError(f"tau must be positive, got {tau}")
    pair = power_iteration(grad, k, seed)
    return Rank1Atom(-float(tau), pair.u, pair.v)


class SimplexLMO:
    exact = True

    def __call__(self, grad, t=0):
        return simplex_lmo_exact(grad)

    def __repr__(self):
        return "SimplexLMO()"


class SoftminLMO:
    exact = False

    def __init__(self, beta):
        if not beta > 0:
            raise InvalidArgumentError(f"beta must be positive, got {beta}")
        self.beta = float(beta)

    def __call__(self, grad, t=0):
        return simplex_lmo_softmin(grad, self.beta)

    def __repr__(self):
        return f"SoftminLMO(beta={self.beta!r})"


class TraceNormLMO:
    """Power-iteration LMO on the trace-norm ball.

    Iteration ``t`` seeds its sphere draw with ``(seed, t)``. With
    ``log_schedule`` the power-iteration count grows as
    ``k * ceil(log2(t + 2))`` instead of staying at ``k``.
    """

    exact = False

    def __init__(self, tau, k, seed=0, log_schedule=False):
        if tau <= 0:
            raise InvalidArgumentError(f"tau must be positive, got {tau}")
        if k < 1:
            raise InvalidArgumentError(f"k must be >= 1, got {k}")
        self.tau = float(tau)
        self.k = int(k)
        self.seed = int(seed)
        self.log_schedule = bool(log_schedule)

    def iterations(self, t):
        if self.log_schedule:
            return self.k * math.ceil(math.log2(t + 2))
        return self.k

    def __call__(self, grad, t=0):
        return tracenorm_lmo(grad, self.tau, self.iterations(t), (self.seed, int(t)))
