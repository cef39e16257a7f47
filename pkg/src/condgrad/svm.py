"""Neural SVM: the l2-SVM dual over the unit simplex trained by Frank-Wolfe
with a softmin (or exact) linear minimization, plus the deep variant that
trains a small tanh feature network under the FW head.

The l2 slack term ``C/2 sum(eps^2)`` is folded into the kernel as
``K + I/C``. Decisions use ``sign(sum_i alpha_i y_i k(x_i, x))`` with no
bias; ``sign(0)`` is +1.
"""
import math
from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from .baselines import AdamState, adam_step
from .domains import SimplexLMO, SoftminLMO
from .errors import FormatError, InvalidArgumentError
from .fw import Constant, Default, FwProblem, FwTrace, fmt, run_fw
from .linalg import as_matrix, as_vector, softmin
from .tape import Tape


@dataclass(frozen=True)
class LabeledDataset:
    x: np.ndarray
    y: np.ndarray

    def __post_init__(self):
        x = as_matrix(self.x, "samples")
        y = np.asarray(self.y, dtype=np.float64).reshape(-1)
        if x.shape[0] != y.shape[0]:
            raise InvalidArgumentError(f"{x.shape[0]} samples but {y.shape[0]} labels")
        if not np.all((y == 1.0) | (y == -1.0)):
            raise InvalidArgumentError("labels must be -1 or +1")
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "y", y)

    @property
    def n(self):
        return self.x.shape[0]

    @property
    def d(self):
        return self.x.shape[1]


@dataclass(frozen=True)
class Linear:
    def __call__(self, x1, x2):
        return x1 @ x2.T

    def describe(self):
        return "linear"


@dataclass(frozen=True)
class Rbf:
    """``exp(-|x - x'|^2 / (2 bandwidth^2))``."""

    bandwidth: float = 0.5

    def __post_init__(self):
        if not self.bandwidth > 0:
            raise InvalidArgumentError(f"bandwidth must be positive, got {self.bandwidth}")

    def __call__(self, x1, x2):
        return _kernels.rbf_gram(np.ascontiguousarray(x1), np.ascontiguousarray(x2), float(self.bandwidth))

    def describe(self):
        return f"rbf:{self.bandwidth!r}"


def parse_kernel(text):
    name, _, arg = text.partition(":")
    if name == "linear":
        return Linear()
    if name == "rbf":
        return Rbf(float(arg) if arg else 0.5)
    raise InvalidArgumentError(f"unknown kernel {text!r}")


def build_kernel(data, spec, C=1.0):
    """``K_ij = y_i y_j k(x_i, x_j) + delta_ij / C``."""
    if data.n < 2:
        raise InvalidArgumentError("need at least two samples")
    if not C > 0:
        raise InvalidArgumentError(f"C must be positive, got {C}")
    gram = spec(data.x, data.x)
    K = np.outer(data.y, data.y) * gram
    if math.isfinite(C):
        K[np.diag_indices_from(K)] += 1.0 / C
    # symmetrize away rounding from the kernel evaluation
    return 0.5 * (K + K.T)


def _check_dims(alpha, K):
    if K.ndim != 2 or K.shape[0] != K.shape[1] or K.shape[0] != alpha.shape[0]:
        raise InvalidArgumentError(f"alpha of length {alpha.shape[0]} vs kernel {K.shape}")


def dual_objective(alpha, K):
    alpha = np.asarray(alpha, dtype=np.float64)
    _check_dims(alpha, K)
    return 0.5 * float(alpha @ (K @ alpha))


def dual_gradient(alpha, K):
    alpha = np.asarray(alpha, dtype=np.float64)
    _check_dims(alpha, K)
    return K @ alpha


def simplex_qp_problem(K, lmo, x0=None):
    """``min 1/2 a^T K a`` over the unit simplex, starting at uniform by default."""
    K = as_matrix(K, "K")
    n = K.shape[0]
    if x0 is None:
        x0 = np.full(n, 1.0 / n)
    return FwProblem(
        objective=lambda a: 0.5 * float(a @ (K @ a)),
        gradient=lambda a: K @ a,
        lmo=lmo,
        x0=np.asarray(x0, dtype=np.float64),
    )


def fw_svm_step(alpha, K, gamma, beta):
    """``(1 - gamma) alpha + gamma softmin(K alpha, beta)``."""
    s = softmin(dual_gradient(alpha, K), beta)
    return (1.0 - gamma) * alpha + gamma * s


@dataclass
class SvmModel:
    alpha: np.ndarray
    x: np.ndarray
    y: np.ndarray
    kernel: object
    beta: float
    C: float
    meta: dict = field(default_factory=dict)

    def decision_function(self, x):
        x = np.atleast_2d(np.asarray(x, dtype=np.float64))
        if x.shape[1] != self.x.shape[1]:
            raise InvalidArgumentError(f"expected {self.x.shape[1]} features, got {x.shape[1]}")
        return self.kernel(x, self.x) @ (self.alpha * self.y)

    def predict(self, x):
        scores = self.decision_function(x)
        return np.where(scores >= 0.0, 1, -1), scores

    def accuracy(self, data):
        labels, _ = self.predict(data.x)
        return float(np.mean(labels == data.y))


def svm_predict(model, x):
    """Label in {-1, +1} and score for a single sample."""
    x = as_vector(x, "x")
    labels, scores = model.predict(x[None, :])
    return int(labels[0]), float(scores[0])


def svm_train(data, kernel, C=1.0, beta=1.0, schedule=None, T=500, exact=False, alpha0=None):
    """Train the dual by FW from uniform ``alpha`` (or ``alpha0``).

    ``exact=True`` uses the vertex LMO instead of softmin.
    """
    schedule = Default() if schedule is None else schedule
    K = build_kernel(data, kernel, C)
    lmo = SimplexLMO() if exact else SoftminLMO(beta)
    alpha, trace = run_fw(simplex_qp_problem(K, lmo, alpha0), schedule, T)
    model = SvmModel(alpha, data.x, data.y, kernel, float(beta), float(C))
    return model, trace


# --- deep SVM --------------------------------------------------------------

# Uniform(+-INIT_SCALE / sqrt(fan_in)). With 1.0 the 2-4-2 net on circles
# stalls at a plateau in about half the seeds; 2.0 escapes it.
INIT_SCALE = 2.0


class FeatureNet:
    """Fully connected tanh network, e.g. sizes (2, 4, 2)."""

    def __init__(self, params):
        self.params = {k: np.asarray(v, dtype=np.float64) for k, v in params.items()}

    @classmethod
    def init(cls, sizes=(2, 4, 2), seed=0):
        rng = np.random.default_rng(seed)
        params = {}
        for layer, (fan_in, fan_out) in enumerate(zip(sizes[:-1], sizes[1:]), start=1):
            bound = INIT_SCALE / math.sqrt(fan_in)
            params[f"W{layer}"] = rng.uniform(-bound, bound, size=(fan_in, fan_out))
            params[f"b{layer}"] = rng.uniform(-bound, bound, size=fan_out)
        return cls(params)

    @property
    def depth(self):
        return len(self.params) // 2

    def features(self, x):
        h = np.asarray(x, dtype=np.float64)
        for layer in range(1, self.depth + 1):
            h = np.tanh(h @ self.params[f"W{layer}"] + self.params[f"b{layer}"])
        return h

    def features_on_tape(self, tape, pvars, x):
        h = tape.const(x)
        for layer in range(1, self.depth + 1):
            h = tape.tanh(tape.matmul(h, pvars[f"W{layer}"]) + pvars[f"b{layer}"])
        return h

    def copy(self):
        return FeatureNet(self.params)


def hinge_loss_and_grad(net, x, y, alpha):
    """Mean hinge loss of the FW head's scores and its gradient w.r.t. the
    net parameters, with ``alpha`` held fixed.

    Scores use the linear kernel on the features:
    ``s = Phi Phi^T (alpha * y)``.
    """
    tape = Tape()
    pvars = {k: tape.input(v) for k, v in net.params.items()}
    phi = net.features_on_tape(tape, pvars, x)
    weights = tape.matmul(tape.const((alpha * y)[None, :]), phi)
    scores = tape.sum(tape.mul(phi, weights), axis=1)
    margins = 1.0 - tape.mul(tape.const(y), scores)
    loss = tape.scale(tape.sum(tape.clamp(margins, lo=0.0)), 1.0 / len(y))
    grads = tape.backward(loss)
    return float(loss.value), {k: grads.get(v, np.zeros_like(net.params[k])) for k, v in pvars.items()}


@dataclass
class DeepSvmResult:
    net: FeatureNet
    model: SvmModel
    trace: FwTrace
    hinge_losses: list


def deep_svm_train(data, net=None, C=1.0, beta=1.0, schedule=None, outer_iters=20,
                   inner_iters=500, net_steps=25, lr=0.01, seed=0):
    """End-to-end deep SVM.

    Each outer iteration runs ``inner_iters`` FW steps on the kernel of the
    current features (warm-started), then ``net_steps`` Adam steps on the
    hinge loss with ``alpha`` frozen. A final FW pass of ``inner_iters``
    steps on the final features produces the returned model and trace.
    """
    schedule = Constant(0.01) if schedule is None else schedule
    net = FeatureNet.init((data.d, 4, 2), seed) if net is None else net.copy()
    alpha = np.full(data.n, 1.0 / data.n)
    states = {k: AdamState.like(v, lr=lr) for k, v in net.params.items()}
    hinge = []
    lmo = SoftminLMO(beta)
    for _ in range(outer_iters):
        K = build_kernel(LabeledDataset(net.features(data.x), data.y), Linear(), C)
        alpha, _ = run_fw(simplex_qp_problem(K, lmo, alpha), schedule, inner_iters)
        for _ in range(net_steps):
            loss, grads = hinge_loss_and_grad(net, data.x, data.y, alpha)
            hinge.append(loss)
            for k in net.params:
                net.params[k], states[k] = adam_step(net.params[k], grads[k], states[k])
    feats = LabeledDataset(net.features(data.x), data.y)
    model, trace = svm_train(feats, Linear(), C, beta, schedule, inner_iters, alpha0=alpha)
    return DeepSvmResult(net, model, trace, hinge)


def deep_svm_predict(net, model, x):
    return model.predict(net.features(np.atleast_2d(x)))


# --- model files -----------------------------------------------------------

def save_model(model, path):
    d = model.x.shape[1]
    lines = [
        "CGM1 svm",
        f"kernel={model.kernel.describe()}",
        f"beta={fmt(model.beta)}",
        f"C={fmt(model.C)}",
        f"n={model.x.shape[0]}",
    ]
    lines += [f"{k}={v}" for k, v in sorted(model.meta.items())]
    lines.append(",".join(["alpha", "label"] + [f"feature_{j}" for j in range(d)]))
    for a, label, row in zip(model.alpha, model.y, model.x):
        lines.append(",".join([fmt(a), str(int(label))] + [fmt(v) for v in row]))
    with open(path, "w", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")


def load_model(path):
    with open(path) as fh:
        lines = fh.read().splitlines()
    if not lines or lines[0].strip() != "CGM1 svm":
        raise FormatError("not a CGM1 svm model file", line=1)
    meta = {}
    i = 1
    while i < len(lines) and "=" in lines[i] and "," not in lines[i]:
        key, _, value = lines[i].partition("=")
        meta[key.strip()] = value.strip()
        i += 1
    try:
        kernel = parse_kernel(meta.pop("kernel"))
        beta = float(meta.pop("beta"))
        C = float(meta.pop("C"))
        n = int(meta.pop("n"))
    except (KeyError, ValueError) as exc:
        raise FormatError(f"bad svm header: {exc}") from None
    rows = []
    for lineno in range(i + 2, len(lines) + 1):
        text = lines[lineno - 1]
        if not text.strip():
            continue
        try:
            rows.append([float(c) for c in text.split(",")])
        except ValueError as exc:
            raise FormatError(str(exc), line=lineno) from None
    if len(rows) != n:
        raise FormatError(f"expected {n} support rows, found {len(rows)}")
    table = np.array(rows)
    return SvmModel(table[:, 0], table[:, 2:], table[:, 1], kernel, beta, C, meta)
