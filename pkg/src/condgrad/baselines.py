"""Hand-coded competitors for the simplex QP: Adam on the Lagrangian with
nonnegativity clipping, Adam on a softmax reparameterization, and projected
gradient descent."""
import math
import time
from dataclasses import dataclass, replace

import numpy as np

from .errors import InvalidArgumentError, NumericalError
from .fw import FwProblem, FwTrace
from .linalg import as_matrix, project_simplex
from .tape import Tape


@dataclass(frozen=True)
class AdamState:
    m: np.ndarray
    v: np.ndarray
    t: int = 0
    lr: float = 0.001
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def like(cls, params, lr=0.001, **kw):
        zeros = np.zeros(np.shape(params))
        return cls(zeros, zeros.copy(), 0, lr, **kw)


def adam_step(params, grad, state):
    """One bias-corrected Adam update; returns ``(new_params, new_state)``."""
    params = np.asarray(params, dtype=np.float64)
    grad = np.asarray(grad, dtype=np.float64)
    if params.shape != grad.shape or state.m.shape != params.shape:
        raise InvalidArgumentError(f"shape mismatch: params {params.shape}, grad {grad.shape}")
    t = state.t + 1
    m = state.beta1 * state.m + (1.0 - state.beta1) * grad
    v = state.beta2 * state.v + (1.0 - state.beta2) * grad * grad
    m_hat = m / (1.0 - state.beta1 ** t)
    v_hat = v / (1.0 - state.beta2 ** t)
    new = params - state.lr * m_hat / (np.sqrt(v_hat) + state.eps)
    return new, replace(state, m=m, v=v, t=t)


def _fw_gap(alpha, grad):
    return float(alpha @ grad - grad.min())


def _check_finite(value, t):
    if not math.isfinite(value):
        raise NumericalError(f"objective became {value} at iteration {t}")


def lagrangian_objective(alpha, K, lam):
    """``1/2 a^T K a - lam * sum(a)`` and its gradient ``K a - lam``."""
    alpha = np.asarray(alpha, dtype=np.float64)
    with np.errstate(over="ignore", invalid="ignore"):
        Ka = K @ alpha
        return 0.5 * float(alpha @ Ka) - lam * float(alpha.sum()), Ka - lam


def lagrangian_adam_train(K, T, lr=0.01, lam=None, alpha0=None):
    """Adam on the Lagrangian, clipping at zero after every step.

    ``lam`` defaults to ``1/n``. The trace records the Lagrangian value; its
    duality-gap column is NaN since iterates leave the simplex.
    """
    K = as_matrix(K, "K")
    n = K.shape[0]
    lam = 1.0 / n if lam is None else float(lam)
    if lam < 0:
        raise InvalidArgumentError("lambda must be nonnegative")
    alpha = np.full(n, 1.0 / n) if alpha0 is None else np.array(alpha0, dtype=np.float64)
    state = AdamState.like(alpha, lr=lr)
    trace = FwTrace()
    start = time.perf_counter()
    for t in range(T):
        value, grad = lagrangian_objective(alpha, K, lam)
        _check_finite(value, t)
        trace.append(t, value, math.nan, lr, 1e3 * (time.perf_counter() - start))
        alpha, state = adam_step(alpha, grad, state)
        np.maximum(alpha, 0.0, out=alpha)
    return alpha, trace


def normalized(alpha):
    total = alpha.sum()
    if total <= 0:
        raise NumericalError("all multipliers collapsed to zero")
    return alpha / total


def reparam_loss_and_grad(theta, K):
    """Dual objective at ``alpha = softmax(theta)`` and its gradient in theta."""
    tape = Tape()
    th = tape.input(theta)
    alpha = tape.softmin(tape.scale(th, -1.0), 1.0)
    loss = tape.scale(tape.dot(alpha, tape.matvec(tape.const(K), alpha)), 0.5)
    grads = tape.backward(loss)
    return float(loss.value), grads[th], alpha.value


def reparam_simplex_train(K, T, lr=0.01, theta0=None):
    """Adam on ``theta`` with ``alpha = softmax(theta)``."""
    K = as_matrix(K, "K")
    n = K.shape[0]
    theta = np.zeros(n) if theta0 is None else np.array(theta0, dtype=np.float64)
    state = AdamState.like(theta, lr=lr)
    trace = FwTrace()
    start = time.perf_counter()
    for t in range(T):
        value, grad, alpha = reparam_loss_and_grad(theta, K)
        _check_finite(value, t)
        trace.append(t, value, _fw_gap(alpha, K @ alpha), lr, 1e3 * (time.perf_counter() - start))
        theta, state = adam_step(theta, grad, state)
    _, _, alpha = reparam_loss_and_grad(theta, K)
    return alpha, trace


def projected_gd_train(problem, step, T, gap_tol=None):
    """``a <- P_simplex(a - step * grad f(a))``.

    Stops early once the FW gap at the current iterate is ``<= gap_tol``.
    """
    if not step > 0:
        raise InvalidArgumentError(f"step must be positive, got {step}")
    alpha = project_simplex(problem.x0)
    trace = FwTrace()
    start = time.perf_counter()
    for t in range(T):
        value = problem.objective(alpha)
        _check_finite(value, t)
        grad = problem.gradient(alpha)
        gap = _fw_gap(alpha, grad)
        trace.append(t, value, gap, step, 1e3 * (time.perf_counter() - start))
        if gap_tol is not None and gap <= gap_tol:
            break
        alpha = project_simplex(alpha - step * grad)
    return alpha, trace


def projected_gd_qp(K, T=100000, step=None, gap_tol=1e-10):
    """Projected gradient on ``1/2 a^T K a`` with step ``1/lambda_max(K)``."""
    K = as_matrix(K, "K")
    n = K.shape[0]
    if step is None:
        lmax = float(np.linalg.eigvalsh(K)[-1])
        step = 1.0 / max(lmax, 1e-12)
    problem = FwProblem(
        objective=lambda a: 0.5 * float(a @ (K @ a)),
        gradient=lambda a: K @ a,
        lmo=None,
        x0=np.full(n, 1.0 / n),
    )
    return projected_gd_train(problem, step, T, gap_tol)
