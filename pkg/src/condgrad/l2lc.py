"""Learned conditional gradients.

A two-layer LSTM controller either emits the FW step size (``gamma``
variant, fed its previous step) or a surrogate gradient that is pushed onto
the simplex by softmin (``direction`` variant, fed the true gradient one
coordinate at a time with shared weights and per-coordinate state).

Meta-training minimizes the mean over tasks of ``sum_t f(w_t)`` with Adam,
backpropagating through unroll segments on the tape. Recurrent state is
detached between segments and the optimizee gradient fed to the controller
is always detached, so no second derivatives of ``f`` are needed.
"""
import math
from dataclasses import dataclass, field

import numpy as np

from .baselines import AdamState, adam_step
from .datasets import Circles, SplitSpec, generate, random_qp_kernel, split
from .domains import SoftminLMO
from .errors import FormatError, InvalidArgumentError, NumericalError
from .fw import Constant, Default, FwTrace, describe_schedule, fmt, parse_schedule, step_size
from .linalg import softmin
from .svm import Linear, LabeledDataset, build_kernel, deep_svm_train
from .tape import Tape, _logistic

GATES = ("i", "f", "o", "c")
VARIANTS = ("gamma", "direction")


class MetaDivergenceError(NumericalError):
    pass


class _NumpyOps:
    # Same primitives as the tape, so both paths give identical forwards.
    add = staticmethod(np.add)
    mul = staticmethod(np.multiply)
    matmul = staticmethod(np.matmul)
    matvec = staticmethod(np.matmul)
    tanh = staticmethod(np.tanh)
    logistic = staticmethod(_logistic)


NUMPY_OPS = _NumpyOps()


def lstm_forward(ops, params, x, state, layers):
    """One step of a stacked LSTM. ``x`` is (batch, 1); ``state`` is a list
    of ``(h, c)`` per layer. Returns ``(output (batch,), new_state)``."""
    new_state = []
    inp = x
    for layer in range(layers):
        h, c = state[layer]

        def pre(g):
            p = f"l{layer}."
            return ops.add(ops.add(ops.matmul(inp, params[p + "Wx_" + g]), ops.matmul(h, params[p + "Wh_" + g])),
                           params[p + "b_" + g])

        i = ops.logistic(pre("i"))
        f = ops.logistic(pre("f"))
        o = ops.logistic(pre("o"))
        cand = ops.tanh(pre("c"))
        c_new = ops.add(ops.mul(f, c), ops.mul(i, cand))
        h_new = ops.mul(o, ops.tanh(c_new))
        new_state.append((h_new, c_new))
        inp = h_new
    out = ops.add(ops.matvec(inp, params["out.w"]), params["out.b"])
    return out, new_state


class LstmController:
    """Parameters of the meta-optimizer plus its training-time settings.

    ``meta`` holds ``beta`` (softmin sharpness) and, for the direction
    variant, ``schedule`` (text form of the step-size schedule).
    """

    def __init__(self, variant, params, hidden=20, layers=2, meta=None):
        if variant not in VARIANTS:
            raise InvalidArgumentError(f"variant must be one of {VARIANTS}, got {variant!r}")
        self.variant = variant
        self.params = {k: np.asarray(v, dtype=np.float64) for k, v in params.items()}
        self.hidden = int(hidden)
        self.layers = int(layers)
        self.meta = dict(meta or {})

    @classmethod
    def init(cls, variant, seed=0, hidden=20, layers=2, beta=None, schedule=None):
        rng = np.random.default_rng(seed)
        params = {}
        for layer in range(layers):
            in_dim = 1 if layer == 0 else hidden
            for g in GATES:
                params[f"l{layer}.Wx_{g}"] = rng.uniform(-0.1, 0.1, (in_dim, hidden))
                params[f"l{layer}.Wh_{g}"] = rng.uniform(-0.1, 0.1, (hidden, hidden))
                params[f"l{layer}.b_{g}"] = np.full(hidden, 1.0 if g == "f" else 0.0)
        params["out.w"] = rng.uniform(-0.1, 0.1, hidden)
        params["out.b"] = np.zeros(1)
        meta = {}
        if beta is None:
            beta = 10.0 if variant == "gamma" else 1.0
        meta["beta"] = float(beta)
        if variant == "direction":
            meta["schedule"] = describe_schedule(Default() if schedule is None else schedule)
        return cls(variant, params, hidden, layers, meta)

    @property
    def beta(self):
        return float(self.meta.get("beta", 1.0))

    @property
    def schedule(self):
        return parse_schedule(self.meta.get("schedule", "default"))

    def copy(self):
        return LstmController(self.variant, {k: v.copy() for k, v in self.params.items()},
                              self.hidden, self.layers, self.meta)

    def initial_state(self, batch=1):
        return [(np.zeros((batch, self.hidden)), np.zeros((batch, self.hidden))) for _ in range(self.layers)]

    def emit_gamma(self, prev_gamma, state, t=0):
        out, state = lstm_step(self, np.array([[prev_gamma]]), state)
        return float(_logistic(out)[0]), state

    def emit_direction(self, grad, state, t=0):
        out, state = lstm_step(self, np.asarray(grad, dtype=np.float64)[:, None], state)
        return out, state

    def gamma_runner(self):
        return GammaRunner(self)

    def __repr__(self):
        return f"LstmController({self.variant!r}, hidden={self.hidden}, layers={self.layers})"


def lstm_step(controller, x, state):
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != 1:
        raise InvalidArgumentError(f"controller input must have shape (batch, 1), got {x.shape}")
    if len(state) != controller.layers or any(
            h.shape != (x.shape[0], controller.hidden) or c.shape != h.shape for h, c in state):
        raise InvalidArgumentError("controller state does not match the input batch / hidden size")
    return lstm_forward(NUMPY_OPS, controller.params, x, state, controller.layers)


class ScheduleController:
    """Stand-in controller that emits a hand-coded schedule exactly.

    As a direction controller it returns the true gradient unchanged.
    """

    variant = "gamma"

    def __init__(self, schedule=None, beta=10.0):
        self.schedule_ = Default() if schedule is None else schedule
        self.beta = float(beta)

    def initial_state(self, batch=1):
        return None

    def emit_gamma(self, prev_gamma, state, t=0):
        return step_size(self.schedule_, t), state

    def emit_direction(self, grad, state, t=0):
        return np.asarray(grad, dtype=np.float64), state

    def gamma_runner(self):
        return GammaRunner(self)


INITIAL_GAMMA = 1.0


class GammaRunner:
    def __init__(self, controller):
        self.controller = controller
        self.prev = INITIAL_GAMMA
        self.state = controller.initial_state(1)

    def next(self, t):
        gamma, self.state = self.controller.emit_gamma(self.prev, self.state, t)
        self.prev = gamma
        return gamma


# --- optimizee steps -------------------------------------------------------

def learned_gamma_step(controller, prev_gamma, state, w, problem, t=0):
    """``gamma_t`` from the controller, then ``(1-gamma) w + gamma s`` with
    ``s`` from the problem's (softmin) LMO."""
    gamma, state = controller.emit_gamma(prev_gamma, state, t)
    gamma = min(1.0, max(0.0, gamma))
    s = problem.lmo(problem.gradient(w), t)
    return (1.0 - gamma) * w + gamma * s, gamma, state


def learned_direction_step(controller, state, w, problem, gamma, beta, t=0):
    """``g_t`` from the controller, then ``(1-gamma) w + gamma softmin(g_t)``."""
    g, state = controller.emit_direction(problem.gradient(w), state, t)
    s = softmin(g, beta)
    return (1.0 - gamma) * w + gamma * s, state


def _vertex_gap(w, grad):
    return float(w @ grad - grad.min())


def run_learned_gamma(controller, problem, T):
    w = np.array(problem.x0, dtype=np.float64)
    state = controller.initial_state(1)
    prev = INITIAL_GAMMA
    trace = FwTrace()
    for t in range(T):
        grad = problem.gradient(w)
        obj = problem.objective(w)
        w_next, gamma, state = learned_gamma_step(controller, prev, state, w, problem, t)
        trace.append(t, obj, _vertex_gap(w, grad), gamma, 0.0)
        w, prev = w_next, gamma
    return w, trace


def run_learned_direction(controller, problem, T, schedule=None, beta=None):
    schedule = controller.schedule if schedule is None else schedule
    beta = controller.beta if beta is None else beta
    w = np.array(problem.x0, dtype=np.float64)
    state = controller.initial_state(w.shape[0])
    trace = FwTrace()
    for t in range(T):
        gamma = step_size(schedule, t)
        grad = problem.gradient(w)
        obj = problem.objective(w)
        w_next, state = learned_direction_step(controller, state, w, problem, gamma, beta, t)
        trace.append(t, obj, _vertex_gap(w, grad), gamma, 0.0)
        w = w_next
    return w, trace


# --- tasks -----------------------------------------------------------------

@dataclass(frozen=True)
class QPTask:
    """``min 1/2 w^T K w`` over the simplex, starting from uniform."""

    K: np.ndarray

    @property
    def n(self):
        return self.K.shape[0]

    def objective(self, w):
        return 0.5 * float(w @ (self.K @ w))

    def gradient(self, w):
        return self.K @ w

    def problem(self, beta):
        from .svm import simplex_qp_problem
        return simplex_qp_problem(self.K, SoftminLMO(beta))


@dataclass
class TaskFamily:
    train: list
    val: list
    test: list
    info: dict = field(default_factory=dict)


def qp_tasks(n=20, n_train=32, n_val=8, n_test=16, seed=0, rank=None):
    """Random PSD simplex QPs; the three sets use disjoint seed streams."""
    def make(count, stream):
        return [QPTask(random_qp_kernel(n, (seed, stream, i), rank)) for i in range(count)]
    return TaskFamily(make(n_train, 0), make(n_val, 1), make(n_test, 2), {"kind": "qp", "n": n})


def svm_circles_tasks(n_total=600, task_size=50, n_train=16, n_val=4, seed=7, C=1.0,
                      outer_iters=20, noise=0.1):
    """SVM duals on deep features of a circles dataset.

    The data is split three ways: the first part trains the feature network
    (deep SVM), the second supplies the meta-training/validation tasks as
    random subsets of ``task_size`` points, the third is the single test task.
    """
    data = generate(Circles(n_total, 1.0, 2.0, noise, seed))
    optimizee, optimizer, test = split(data, SplitSpec((1 / 3, 1 / 3, 1 / 3), seed))
    net = deep_svm_train(optimizee, C=C, outer_iters=outer_iters, inner_iters=50, seed=seed).net
    rng = np.random.default_rng((seed, 1))

    def task(subset):
        feats = LabeledDataset(net.features(subset.x), subset.y)
        return QPTask(build_kernel(feats, Linear(), C))

    pool = LabeledDataset(optimizer.x, optimizer.y)
    tasks = []
    for _ in range(n_train + n_val):
        idx = rng.choice(pool.n, size=min(task_size, pool.n), replace=False)
        tasks.append(task(LabeledDataset(pool.x[idx], pool.y[idx])))
    info = {"kind": "svm-circles", "net": net, "splits": (optimizee, optimizer, test)}
    return TaskFamily(tasks[:n_train], tasks[n_train:], [task(test)], info)


# --- meta-training ---------------------------------------------------------

def _segment(controller, task, carry, t0, steps, beta, schedule):
    """Differentiate ``sum f(w_t)`` over one unroll segment.

    ``carry`` is ``(w, state, prev_gamma)``. Returns the segment loss, the
    parameter gradients, the carry for the next segment and the (detached)
    optimizee gradients that were fed forward.
    """
    w, state, prev = carry
    tape = Tape()
    pv = {k: tape.input(v) for k, v in controller.params.items()}
    st = [(tape.const(h), tape.const(c)) for h, c in state]
    wv = tape.const(w)
    Kc = tape.const(task.K)
    loss = tape.const(0.0)
    prev_v = tape.const(np.array([[prev]]))
    fed = []
    for t in range(t0, t0 + steps):
        grad = task.K @ wv.value
        fed.append(grad)
        if controller.variant == "gamma":
            out, st = lstm_forward(tape, pv, prev_v, st, controller.layers)
            gamma = tape.logistic(out)
            s = tape.const(softmin(grad, beta))
            wv = tape.mul(1.0 - gamma, wv) + tape.mul(gamma, s)
            prev_v = tape.mul(gamma, np.ones((1, 1)))
        else:
            out, st = lstm_forward(tape, pv, tape.const(grad[:, None]), st, controller.layers)
            gamma = step_size(schedule, t)
            wv = tape.scale(wv, 1.0 - gamma) + tape.scale(tape.softmin(out, beta), gamma)
        loss = loss + tape.scale(tape.dot(wv, tape.matvec(Kc, wv)), 0.5)
    grads = tape.backward(loss)
    pgrads = {k: np.asarray(grads.get(v, np.zeros_like(controller.params[k])), dtype=np.float64)
              for k, v in pv.items()}
    new_prev = float(prev_v.value[0, 0]) if controller.variant == "gamma" else prev
    new_carry = (wv.value, [(h.value, c.value) for h, c in st], new_prev)
    return float(loss.value), pgrads, new_carry, fed


def unroll_loss_and_grad(controller, task, T, unroll=None, beta=None, schedule=None):
    """Total ``sum_{t=1}^T f(w_t)`` and its (truncated) gradient in the
    controller parameters, summed over segments of ``unroll`` steps."""
    unroll = T if unroll is None else unroll
    beta = controller.beta if beta is None else beta
    schedule = controller.schedule if schedule is None and controller.variant == "direction" else schedule
    batch = 1 if controller.variant == "gamma" else task.n
    carry = (np.full(task.n, 1.0 / task.n), controller.initial_state(batch), INITIAL_GAMMA)
    total = 0.0
    grads = {k: np.zeros_like(v) for k, v in controller.params.items()}
    fed = []
    for t0 in range(0, T, unroll):
        loss, g, carry, f = _segment(controller, task, carry, t0, min(unroll, T - t0), beta, schedule)
        total += loss
        fed += f
        for k in grads:
            grads[k] += g[k]
    return total, grads, fed


def trajectory_loss(controller, task, T):
    """``sum_{t=1}^T f(w_t)`` with the numpy forward."""
    problem = task.problem(controller.beta)
    if controller.variant == "gamma":
        w, trace = run_learned_gamma(controller, problem, T)
    else:
        w, trace = run_learned_direction(controller, problem, T)
    return float(np.sum(trace.objective[1:]) + task.objective(w))


def mean_loss(controller, tasks, T):
    return float(np.mean([trajectory_loss(controller, task, T) for task in tasks]))


@dataclass
class MetaResult:
    controller: LstmController
    train_losses: list
    val_losses: list
    initial_train_loss: float
    initial_val_loss: float
    best_epoch: int

    def to_csv(self, path=None):
        lines = ["epoch,train_loss,val_loss"]
        for e, (a, b) in enumerate(zip(self.train_losses, self.val_losses), start=1):
            lines.append(f"{e},{fmt(a)},{fmt(b)}")
        text = "\n".join(lines) + "\n"
        if path is not None:
            with open(path, "w", newline="\n") as fh:
                fh.write(text)
        return text


def meta_train(family, variant, T=100, unroll=20, meta_epochs=50, lr=1e-3, seed=0,
               patience=10, beta=None, schedule=None, controller=None, log=None):
    """Adam on the controller parameters over the family's training tasks.

    One meta-epoch visits every training task once (seeded shuffle) and takes
    an Adam step per unroll segment. Validation loss after each epoch drives
    early stopping; the best-validation controller is returned.
    """
    if unroll < 1 or T < 1:
        raise InvalidArgumentError("T and unroll must be >= 1")
    ctrl = (LstmController.init(variant, seed, beta=beta, schedule=schedule)
            if controller is None else controller.copy())
    states = {k: AdamState.like(v, lr=lr) for k, v in ctrl.params.items()}
    init_train = mean_loss(ctrl, family.train, T)
    init_val = mean_loss(ctrl, family.val, T) if family.val else init_train
    best, best_val, best_epoch = ctrl.copy(), init_val, 0
    train_losses, val_losses = [], []
    since_best = 0
    for epoch in range(1, meta_epochs + 1):
        order = np.random.default_rng((seed, epoch)).permutation(len(family.train))
        for i in order:
            task = family.train[i]
            batch = 1 if variant == "gamma" else task.n
            carry = (np.full(task.n, 1.0 / task.n), ctrl.initial_state(batch), INITIAL_GAMMA)
            for t0 in range(0, T, unroll):
                # overflow is caught by the finiteness check below
                with np.errstate(over="ignore", invalid="ignore"):
                    loss, grads, carry, _ = _segment(ctrl, task, carry, t0, min(unroll, T - t0),
                                                     ctrl.beta, ctrl.schedule if variant == "direction" else None)
                if not math.isfinite(loss) or not all(np.all(np.isfinite(g)) for g in grads.values()):
                    raise MetaDivergenceError(f"meta-loss diverged in epoch {epoch} (loss={loss})")
                for k in ctrl.params:
                    ctrl.params[k], states[k] = adam_step(ctrl.params[k], grads[k], states[k])
        train_loss = mean_loss(ctrl, family.train, T)
        val_loss = mean_loss(ctrl, family.val, T) if family.val else train_loss
        if not (math.isfinite(train_loss) and math.isfinite(val_loss)):
            raise MetaDivergenceError(f"meta-loss diverged in epoch {epoch}")
        train_losses.append(train_loss)
        val_losses.append(val_loss)
        if log is not None:
            log(epoch, train_loss, val_loss)
        if val_loss < best_val:
            best, best_val, best_epoch, since_best = ctrl.copy(), val_loss, epoch, 0
        else:
            since_best += 1
            if since_best >= patience:
                break
    return MetaResult(best, train_losses, val_losses, init_train, init_val, best_epoch)


# --- controller files ------------------------------------------------------

def save_controller(controller, path, extra=None):
    lines = [
        "CGM1 lstm",
        f"variant={controller.variant}",
        f"hidden={controller.hidden}",
        f"layers={controller.layers}",
    ]
    meta = dict(controller.meta)
    meta.update(extra or {})
    lines += [f"{k}={v}" for k, v in sorted(meta.items())]
    lines.append(f"params={len(controller.params)}")
    for name in sorted(controller.params):
        value = controller.params[name]
        shape = "x".join(str(s) for s in value.shape)
        lines.append(",".join([name, shape] + [fmt(v) for v in value.ravel()]))
    with open(path, "w", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")


def load_controller(path):
    with open(path) as fh:
        lines = fh.read().splitlines()
    if not lines or lines[0].strip() != "CGM1 lstm":
        raise FormatError("not a CGM1 lstm controller file", line=1)
    header = {}
    i = 1
    while i < len(lines) and "=" in lines[i] and "," not in lines[i]:
        key, _, value = lines[i].partition("=")
        header[key.strip()] = value.strip()
        i += 1
        if key.strip() == "params":
            break
    try:
        variant = header.pop("variant")
        hidden = int(header.pop("hidden"))
        layers = int(header.pop("layers"))
        count = int(header.pop("params"))
    except (KeyError, ValueError) as exc:
        raise FormatError(f"bad lstm header: {exc}") from None
    params = {}
    for lineno in range(i + 1, len(lines) + 1):
        cells = lines[lineno - 1].split(",")
        if len(cells) < 2:
            continue
        try:
            shape = tuple(int(s) for s in cells[1].split("x"))
            params[cells[0]] = np.array([float(c) for c in cells[2:]]).reshape(shape)
        except ValueError as exc:
            raise FormatError(str(exc), line=lineno) from None
    if len(params) != count:
        raise FormatError(f"expected {count} parameter rows, found {len(params)}")
    meta = {}
    for key, value in header.items():
        if key == "beta":
            meta[key] = float(value)
        else:
            meta[key] = value
    return LstmController(variant, params, hidden, layers, meta)
