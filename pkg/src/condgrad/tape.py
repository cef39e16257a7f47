"""Minimal reverse-mode differentiation tape.

Nodes are appended as operations are recorded; each stores its op kind, the
ids of its inputs and (once evaluated) its forward value. ``Var`` is a thin
handle pairing a tape with a node id and overloading ``+ - *``.

Supported ops: add, mul, matvec, matmul, tanh, logistic, softmin, dot,
scale, sum, clamp. ``add`` and ``mul`` broadcast like numpy. Anything else is
composed from these. Leaves are ``input`` (a value you want the gradient of)
and ``const``; ``detach`` copies a node's value into a fresh const, which is
how truncated backpropagation cuts the graph.
"""
from collections import deque
from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from .errors import TapeError

LEAVES = ("input", "const")


@dataclass
class Node:
    kind: str
    inputs: tuple
    attrs: dict = field(default_factory=dict)
    value: object = None


class Var:
    __slots__ = ("tape", "id")

    def __init__(self, tape, node_id):
        self.tape = tape
        self.id = node_id

    @property
    def value(self):
        return self.tape.nodes[self.id].value

    @property
    def shape(self):
        return np.shape(self.value)

    def __add__(self, other):
        return self.tape.add(self, other)

    __radd__ = __add__

    def __mul__(self, other):
        return self.tape.mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return self.tape.scale(self, -1.0)

    def __sub__(self, other):
        return self.tape.add(self, self.tape.scale(other, -1.0))

    def __rsub__(self, other):
        return self.tape.add(other, self.tape.scale(self, -1.0))

    def __repr__(self):
        return f"Var(id={self.id}, kind={self.tape.nodes[self.id].kind})"


class GradientMap(dict):
    """Node id -> adjoint. Also indexable by ``Var``."""

    def __getitem__(self, key):
        if isinstance(key, Var):
            key = key.id
        return dict.__getitem__(self, key)

    def get(self, key, default=None):
        if isinstance(key, Var):
            key = key.id
        return dict.get(self, key, default)


# --- op table: forward(vals, attrs) and backward(g, vals, out, attrs) ------

def _unbroadcast(g, shape):
    g = np.asarray(g)
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g.reshape(shape)


def _logistic(x):
    x = np.asarray(x, dtype=np.float64)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    e = np.exp(x[~pos])
    out[~pos] = e / (1.0 + e)
    return out


def _softmin_fwd(z, beta):
    z = np.asarray(z, dtype=np.float64)
    if z.ndim == 1:
        return _kernels.softmin(z, beta)
    e = np.exp(-beta * (z - z.min(axis=-1, keepdims=True)))
    return e / e.sum(axis=-1, keepdims=True)


def _softmin_bwd(g, y, beta):
    # Jacobian -beta (diag(y) - y y^T), applied row-wise.
    yg = y * g
    return -beta * (yg - y * yg.sum(axis=-1, keepdims=True))


def _clamp_mask(x, lo, hi):
    mask = np.ones(np.shape(x), dtype=bool)
    if lo is not None:
        mask &= x > lo
    if hi is not None:
        mask &= x < hi
    return mask


def _sum_bwd(g, x, axis):
    if axis is None:
        return np.broadcast_to(g, np.shape(x)).copy()
    return np.broadcast_to(np.expand_dims(g, axis), np.shape(x)).copy()


OPS = {
    "add": (
        lambda v, a: v[0] + v[1],
        lambda g, v, out, a: [_unbroadcast(g, np.shape(v[0])), _unbroadcast(g, np.shape(v[1]))],
    ),
    "mul": (
        lambda v, a: v[0] * v[1],
        lambda g, v, out, a: [_unbroadcast(g * v[1], np.shape(v[0])), _unbroadcast(g * v[0], np.shape(v[1]))],
    ),
    "matvec": (
        lambda v, a: v[0] @ v[1],
        lambda g, v, out, a: [np.outer(g, v[1]), v[0].T @ g],
    ),
    "matmul": (
        lambda v, a: v[0] @ v[1],
        lambda g, v, out, a: [g @ v[1].T, v[0].T @ g],
    ),
    "tanh": (
        lambda v, a: np.tanh(v[0]),
        lambda g, v, out, a: [g * (1.0 - out * out)],
    ),
    "logistic": (
        lambda v, a: _logistic(v[0]),
        lambda g, v, out, a: [g * out * (1.0 - out)],
    ),
    "softmin": (
        lambda v, a: _softmin_fwd(v[0], a["beta"]),
        lambda g, v, out, a: [_softmin_bwd(g, out, a["beta"])],
    ),
    "dot": (
        lambda v, a: float(v[0] @ v[1]),
        lambda g, v, out, a: [g * v[1], g * v[0]],
    ),
    "scale": (
        lambda v, a: a["c"] * v[0],
        lambda g, v, out, a: [a["c"] * g],
    ),
    "sum": (
        lambda v, a: np.sum(v[0], axis=a["axis"]),
        lambda g, v, out, a: [_sum_bwd(g, v[0], a["axis"])],
    ),
    "clamp": (
        lambda v, a: np.clip(v[0], a["lo"], a["hi"]),
        lambda g, v, out, a: [g * _clamp_mask(v[0], a["lo"], a["hi"])],
    ),
}

class Tape:
    """Records operations. With ``eager=False`` values are only produced by
    :meth:`forward`."""

    def __init__(self, eager=True):
        self.nodes = []
        self.eager = eager

    def __len__(self):
        return len(self.nodes)

    # leaves

    def _push(self, kind, inputs, attrs, value):
        self.nodes.append(Node(kind, tuple(inputs), attrs, value))
        return Var(self, len(self.nodes) - 1)

    def input(self, value):
        return self._push("input", (), {}, _as_value(value))

    def const(self, value):
        return self._push("const", (), {}, _as_value(value))

    def detach(self, x):
        x = self._var(x)
        return self.const(np.copy(x.value))

    def _var(self, x):
        if isinstance(x, Var):
            if x.tape is not self:
                raise TapeError("variable belongs to another tape")
            return x
        return self.const(x)

    def apply(self, kind, *args, **attrs):
        if kind not in OPS:
            raise TapeError(f"unknown op kind {kind!r}")
        ins = [self._var(a) for a in args]
        value = None
        if self.eager:
            value = _as_value(OPS[kind][0]([x.value for x in ins], attrs))
        return self._push(kind, [x.id for x in ins], attrs, value)

    # ops

    def add(self, a, b):
        return self.apply("add", a, b)

    def mul(self, a, b):
        return self.apply("mul", a, b)

    def matvec(self, a, x):
        return self.apply("matvec", a, x)

    def matmul(self, a, b):
        return self.apply("matmul", a, b)

    def tanh(self, x):
        return self.apply("tanh", x)

    def logistic(self, x):
        return self.apply("logistic", x)

    def softmin(self, z, beta):
        return self.apply("softmin", z, beta=float(beta))

    def dot(self, a, b):
        return self.apply("dot", a, b)

    def scale(self, x, c):
        return self.apply("scale", x, c=float(c))

    def sum(self, x, axis=None):
        return self.apply("sum", x, axis=axis)

    def clamp(self, x, lo=None, hi=None):
        return self.apply("clamp", x, lo=lo, hi=hi)

    # evaluation

    def topological_order(self):
        n = len(self.nodes)
        indegree = [0] * n
        users = [[] for _ in range(n)]
        for i, node in enumerate(self.nodes):
            for j in node.inputs:
                if not 0 <= j < n:
                    raise TapeError(f"node {i} references missing node {j}")
                indegree[i] += 1
                users[j].append(i)
        ready = deque(i for i in range(n) if indegree[i] == 0)
        order = []
        while ready:
            i = ready.popleft()
            order.append(i)
            for k in users[i]:
                indegree[k] -= 1
                if indegree[k] == 0:
                    ready.append(k)
        if len(order) != n:
            raise TapeError("tape contains a cycle")
        return order

    def forward(self, inputs=None, outputs=None):
        """Re-evaluate every node in topological order.

        ``inputs`` maps leaf ids (or Vars) to new values. Returns the values of
        ``outputs`` (a Var/id or a list of them), or ``None`` if not given.
        """
        for key, value in (inputs or {}).items():
            idx = key.id if isinstance(key, Var) else key
            if self.nodes[idx].kind not in LEAVES:
                raise TapeError(f"node {idx} is not a leaf")
            self.nodes[idx].value = _as_value(value)
        for i in self.topological_order():
            node = self.nodes[i]
            if node.kind in LEAVES:
                if node.value is None:
                    raise TapeError(f"leaf {i} has no value")
                continue
            vals = [self.nodes[j].value for j in node.inputs]
            node.value = _as_value(OPS[node.kind][0](vals, node.attrs))
            if not np.all(np.isfinite(node.value)):
                raise TapeError(f"node {i} ({node.kind}) produced a non-finite value")
        if outputs is None:
            return None
        if isinstance(outputs, (list, tuple)):
            return [self.nodes[o.id if isinstance(o, Var) else o].value for o in outputs]
        return self.nodes[outputs.id if isinstance(outputs, Var) else outputs].value

    def backward(self, output, seed=None):
        """Adjoints of ``output`` with respect to every node it depends on."""
        out_id = output.id if isinstance(output, Var) else output
        order = self.topological_order()
        for node in self.nodes:
            if node.value is None:
                raise TapeError("backward called before forward values exist")
        out_val = self.nodes[out_id].value
        if seed is None:
            if np.ndim(out_val) != 0:
                raise TapeError("non-scalar output needs an explicit seed")
            seed = 1.0
        grads = GradientMap()
        grads[out_id] = _as_value(seed)
        for i in reversed(order[: order.index(out_id) + 1]):
            node = self.nodes[i]
            g = grads.get(i)
            if g is None or node.kind in LEAVES:
                continue
            vals = [self.nodes[j].value for j in node.inputs]
            for j, gj in zip(node.inputs, OPS[node.kind][1](g, vals, node.value, node.attrs)):
                if j in grads:
                    grads[j] = grads[j] + gj
                else:
                    grads[j] = gj
        return grads


def _as_value(x):
    if np.ndim(x) == 0:
        return float(x)
    return np.asarray(x, dtype=np.float64)
