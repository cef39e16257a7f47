"""Hot numeric kernels, each in a numba flavour (``*_nb``) and a numpy
flavour (``*_np``).

The public names at the bottom point at one flavour, chosen once at import
time by :data:`condgrad._accel.USE_NUMBA`. Both flavours are always importable
so the test suite and the benchmark can compare them directly.

All kernels take and return float64 arrays and assume the caller validated
shapes and finiteness.
"""
import math

import numpy as np

from ._accel import USE_NUMBA, njit

LOG_FLOOR = math.log(1e-300)


# --- softmin ---------------------------------------------------------------

@njit
def softmin_nb(z, beta):
    n = z.shape[0]
    zmin = z[0]
    for i in range(1, n):
        if z[i] < zmin:
            zmin = z[i]
    out = np.empty(n)
    total = 0.0
    for i in range(n):
        e = math.exp(-beta * (z[i] - zmin))
        out[i] = e
        total += e
    for i in range(n):
        out[i] /= total
    return out


def softmin_np(z, beta):
    e = np.exp(-beta * (z - z.min()))
    return e / e.sum()


# --- Euclidean projection onto the unit simplex ----------------------------

@njit
def project_simplex_nb(v):
    n = v.shape[0]
    u = np.sort(v)[::-1]
    css = 0.0
    theta = 0.0
    for j in range(n):
        css += u[j]
        t = (css - 1.0) / (j + 1)
        if u[j] - t > 0.0:
            theta = t
    out = np.empty(n)
    for i in range(n):
        d = v[i] - theta
        out[i] = d if d > 0.0 else 0.0
    return out


def project_simplex_np(v):
    u = np.sort(v)[::-1]
    css = np.cumsum(u)
    ts = (css - 1.0) / np.arange(1, v.shape[0] + 1)
    rho = np.nonzero(u - ts > 0.0)[0][-1]
    return np.maximum(v - ts[rho], 0.0)


# --- power iteration -------------------------------------------------------
# Returns (u, v, sigma, ok); ok is False when a product vanished.

@njit
def power_iteration_nb(a, v0, k):
    rows, cols = a.shape
    v = v0.copy()
    u = np.zeros(rows)
    for _ in range(k):
        nu = 0.0
        for i in range(rows):
            acc = 0.0
            for j in range(cols):
                acc += a[i, j] * v[j]
            u[i] = acc
            nu += acc * acc
        nu = math.sqrt(nu)
        if nu == 0.0:
            return u, v, 0.0, False
        for i in range(rows):
            u[i] /= nu
        nv = 0.0
        for j in range(cols):
            acc = 0.0
            for i in range(rows):
                acc += a[i, j] * u[i]
            v[j] = acc
            nv += acc * acc
        nv = math.sqrt(nv)
        if nv == 0.0:
            return u, v, 0.0, False
        for j in range(cols):
            v[j] /= nv
    sigma = 0.0
    for i in range(rows):
        acc = 0.0
        for j in range(cols):
            acc += a[i, j] * v[j]
        sigma += u[i] * acc
    return u, v, sigma, True


def power_iteration_np(a, v0, k):
    v = v0.copy()
    u = np.zeros(a.shape[0])
    for _ in range(k):
        u = a @ v
        nu = np.linalg.norm(u)
        if nu == 0.0:
            return u, v, 0.0, False
        u = u / nu
        v = a.T @ u
        nv = np.linalg.norm(v)
        if nv == 0.0:
            return u, v, 0.0, False
        v = v / nv
    return u, v, float(u @ (a @ v)), True


# --- Gaussian (RBF) gram matrix --------------------------------------------

@njit
def rbf_gram_nb(x1, x2, bandwidth):
    n1, d = x1.shape
    n2 = x2.shape[0]
    scale = -0.5 / (bandwidth * bandwidth)
    out = np.empty((n1, n2))
    for i in range(n1):
        for j in range(n2):
            acc = 0.0
            for c in range(d):
                diff = x1[i, c] - x2[j, c]
                acc += diff * diff
            out[i, j] = math.exp(scale * acc)
    return out


def rbf_gram_np(x1, x2, bandwidth):
    sq = ((x1[:, None, :] - x2[None, :, :]) ** 2).sum(axis=-1)
    return np.exp((-0.5 / (bandwidth * bandwidth)) * sq)


# --- multiclass cross-entropy ----------------------------------------------
# w: (h, m) weights, x: (n, m) samples, y: (n, h) one-hot labels.
# Returns (mean cross-entropy, gradient (h, m)).

@njit
def xent_loss_grad_nb(w, x, y):
    h, m = w.shape
    n = x.shape[0]
    grad = np.zeros((h, m))
    logits = np.empty(h)
    loss = 0.0
    for i in range(n):
        lmax = -np.inf
        for k in range(h):
            acc = 0.0
            for j in range(m):
                acc += w[k, j] * x[i, j]
            logits[k] = acc
            if acc > lmax:
                lmax = acc
        total = 0.0
        for k in range(h):
            total += math.exp(logits[k] - lmax)
        lse = lmax + math.log(total)
        for k in range(h):
            logp = logits[k] - lse
            if y[i, k] != 0.0:
                loss -= y[i, k] * (logp if logp > LOG_FLOOR else LOG_FLOOR)
            coef = math.exp(logp) - y[i, k]
            for j in range(m):
                grad[k, j] += coef * x[i, j]
    return loss / n, grad / n


def xent_loss_grad_np(w, x, y):
    logits = x @ w.T
    logits = logits - logits.max(axis=1, keepdims=True)
    logp = logits - np.log(np.exp(logits).sum(axis=1, keepdims=True))
    n = x.shape[0]
    loss = -(y * np.maximum(logp, LOG_FLOOR)).sum() / n
    grad = (np.exp(logp) - y).T @ x / n
    return float(loss), grad


if USE_NUMBA:
    softmin = softmin_nb
    project_simplex = project_simplex_nb
    power_iteration = power_iteration_nb
    rbf_gram = rbf_gram_nb
    xent_loss_grad = xent_loss_grad_nb
else:
    softmin = softmin_np
    project_simplex = project_simplex_np
    power_iteration = power_iteration_np
    rbf_gram = rbf_gram_np
    xent_loss_grad = xent_loss_grad_np

BACKEND = "numba" if USE_NUMBA else "numpy"
