"""Multiclass softmax classifier with a trace-norm constraint, trained by
Frank-Wolfe whose LMO runs a few power iterations on the gradient matrix.

Objective: mean cross-entropy ``-(1/n) sum_i sum_k y_ik log p_ik`` with
``p_i = softmax(w x_i)`` over classes; ``log p`` is floored at
``log(1e-300)``. The iterate starts at the zero matrix, which is feasible for
any radius.
"""
from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from .domains import TraceNormLMO, TraceNormPoint
from .errors import FormatError, InvalidArgumentError, NumericalError
from .fw import Default, FwProblem, fmt, run_fw
from .linalg import as_matrix, as_vector


@dataclass(frozen=True)
class MulticlassDataset:
    x: np.ndarray
    labels: np.ndarray
    n_classes: int

    def __post_init__(self):
        x = as_matrix(self.x, "samples")
        labels = np.asarray(self.labels).reshape(-1)
        if labels.shape[0] != x.shape[0]:
            raise InvalidArgumentError(f"{x.shape[0]} samples but {labels.shape[0]} labels")
        if labels.size and (labels.min() < 0 or labels.max() >= self.n_classes):
            raise InvalidArgumentError("class ids out of range")
        if not np.all(labels == np.round(labels)):
            raise InvalidArgumentError("class ids must be integers")
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "labels", labels.astype(np.int64))

    @property
    def n(self):
        return self.x.shape[0]

    @property
    def d(self):
        return self.x.shape[1]

    @property
    def onehot(self):
        y = np.zeros((self.n, self.n_classes))
        y[np.arange(self.n), self.labels] = 1.0
        return y

    def subset(self, idx):
        return MulticlassDataset(self.x[idx], self.labels[idx], self.n_classes)


def softmax_probs(w, x):
    """Class probabilities ``softmax(w x)`` for one sample."""
    w = np.asarray(w, dtype=np.float64)
    x = as_vector(x, "x")
    if w.ndim != 2 or w.shape[1] != x.shape[0]:
        raise InvalidArgumentError(f"weights {w.shape} do not match {x.shape[0]} features")
    with np.errstate(over="ignore", invalid="ignore"):
        logits = w @ x
    if not np.all(np.isfinite(logits)):
        raise NumericalError("non-finite logits")
    e = np.exp(logits - logits.max())
    return e / e.sum()


def _weights(w):
    return w.dense if isinstance(w, TraceNormPoint) else np.asarray(w, dtype=np.float64)


def softmax_objective(w, data):
    loss, _ = _kernels.xent_loss_grad(np.ascontiguousarray(_weights(w)), data.x, data.onehot)
    return loss


def softmax_grad(w, data):
    """``(1/n) sum_i (p_i - y_i) x_i^T``, an ``h x m`` matrix."""
    _, grad = _kernels.xent_loss_grad(np.ascontiguousarray(_weights(w)), data.x, data.onehot)
    return grad


@dataclass
class SoftmaxModel:
    weights: TraceNormPoint
    meta: dict = field(default_factory=dict)

    @property
    def tau(self):
        return self.weights.tau

    def predict(self, x):
        """Class ids for the rows of ``x``; ties go to the lowest index."""
        x = np.atleast_2d(np.asarray(x, dtype=np.float64))
        if x.shape[1] != self.weights.shape[1]:
            raise InvalidArgumentError(f"expected {self.weights.shape[1]} features, got {x.shape[1]}")
        return np.argmax(x @ self.weights.dense.T, axis=1)

    def accuracy(self, data):
        return float(np.mean(self.predict(data.x) == data.labels))


def classify(model, x):
    x = as_vector(x, "x")
    return int(np.argmax(softmax_probs(model.weights.dense, x)))


def train_softmax_fw(data, tau=50.0, k=5, schedule=None, T=1000, seed=0, log_schedule=False):
    """Frank-Wolfe on the trace-norm ball from ``w0 = 0``.

    Each step takes the atom ``-tau u1 v1^T`` from ``k`` power iterations on
    the gradient and updates the dense matrix and the atom list together.
    """
    if T < 1 or k < 1:
        raise InvalidArgumentError("T and k must be >= 1")
    schedule = Default() if schedule is None else schedule
    y = data.onehot
    x = data.x

    cache = {}

    def loss_grad(w):
        # run_fw asks for f and grad f at the same point back to back
        key = w.dense.tobytes()
        if cache.get("key") != key:
            cache["key"] = key
            cache["value"] = _kernels.xent_loss_grad(w.dense, x, y)
        return cache["value"]

    def objective(w):
        return loss_grad(w)[0]

    def gradient(w):
        return loss_grad(w)[1]

    problem = FwProblem(
        objective=objective,
        gradient=gradient,
        lmo=TraceNormLMO(tau, k, seed, log_schedule),
        x0=TraceNormPoint.zeros(data.n_classes, data.d, tau),
    )
    w, trace = run_fw(problem, schedule, T)
    return SoftmaxModel(w), trace


# --- model files -----------------------------------------------------------

def save_model(model, path):
    w = model.weights
    h, m = w.shape
    lines = ["CGM1 softmax", f"tau={fmt(w.tau)}", f"shape={h}x{m}", f"atoms={w.n_atoms}"]
    lines += [f"{k}={v}" for k, v in sorted(model.meta.items())]
    for c, u, v in zip(w.coefs, w.us, w.vs):
        lines.append(",".join([fmt(c)] + [fmt(a) for a in u] + [fmt(b) for b in v]))
    for row in w.dense:
        lines.append(",".join(fmt(a) for a in row))
    with open(path, "w", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")


def load_model(path):
    with open(path) as fh:
        lines = fh.read().splitlines()
    if not lines or lines[0].strip() != "CGM1 softmax":
        raise FormatError("not a CGM1 softmax model file", line=1)
    meta = {}
    i = 1
    while i < len(lines) and "=" in lines[i]:
        key, _, value = lines[i].partition("=")
        meta[key.strip()] = value.strip()
        i += 1
    try:
        tau = float(meta.pop("tau"))
        h, m = (int(s) for s in meta.pop("shape").split("x"))
        n_atoms = int(meta.pop("atoms"))
    except (KeyError, ValueError) as exc:
        raise FormatError(f"bad softmax header: {exc}") from None
    rows = []
    for lineno in range(i + 1, len(lines) + 1):
        try:
            rows.append([float(c) for c in lines[lineno - 1].split(",")])
        except ValueError as exc:
            raise FormatError(str(exc), line=lineno) from None
    if len(rows) != n_atoms + h:
        raise FormatError(f"expected {n_atoms + h} data rows, found {len(rows)}")
    atoms, dense = rows[:n_atoms], np.array(rows[n_atoms:])
    if any(len(r) != 1 + h + m for r in atoms) or dense.shape != (h, m):
        raise FormatError("row widths do not match the declared shape")
    coefs = [r[0] for r in atoms]
    us = [np.array(r[1:1 + h]) for r in atoms]
    vs = [np.array(r[1 + h:]) for r in atoms]
    return SoftmaxModel(TraceNormPoint(dense, tau, coefs, us, vs), meta)
