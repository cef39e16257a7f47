"""Generic Frank-Wolfe loop, step-size schedules, duality gap and traces."""
import csv
import io
import math
import time
from dataclasses import dataclass, field
from typing import Any, Callable

import numpy as np

from .domains import Rank1Atom, TraceNormPoint
from .errors import CondGradError, FormatError, FwIterationError, InvalidArgumentError, NumericalError

TRACE_HEADER = ("iter", "objective", "duality_gap", "step_size", "elapsed_ms")


# --- step sizes ------------------------------------------------------------

class Default:
    """gamma_t = 2 / (t + 2)."""

    def __repr__(self):
        return "Default()"


class Harmonic:
    """gamma_t = 2 / (t + 1), clamped to 1 at t = 0."""

    def __repr__(self):
        return "Harmonic()"


class Constant:
    def __init__(self, c):
        if not 0.0 < c <= 1.0:
            raise InvalidArgumentError(f"constant step must lie in (0, 1], got {c}")
        self.c = float(c)

    def __repr__(self):
        return f"Constant({self.c!r})"


class Learned:
    """Step sizes emitted by a controller.

    ``controller.gamma_runner()`` must return an object whose ``next(t)``
    yields the step for iteration ``t``; the runner carries the controller's
    recurrent state between calls.
    """

    def __init__(self, controller):
        self.controller = controller

    def init_state(self):
        return self.controller.gamma_runner()

    def __repr__(self):
        return f"Learned({self.controller!r})"


def step_size(schedule, t, state=None):
    if t < 0:
        raise InvalidArgumentError(f"iteration index must be >= 0, got {t}")
    if isinstance(schedule, Default):
        return 2.0 / (t + 2.0)
    if isinstance(schedule, Harmonic):
        return min(1.0, 2.0 / (t + 1.0))
    if isinstance(schedule, Constant):
        return schedule.c
    if isinstance(schedule, Learned):
        if state is None:
            raise InvalidArgumentError("learned schedule needs its runner state")
        return min(1.0, max(0.0, float(state.next(t))))
    raise InvalidArgumentError(f"unknown schedule {schedule!r}")


def schedule_steps(schedule, count):
    """First ``count`` steps of a stateless schedule as an array."""
    return np.array([step_size(schedule, t) for t in range(count)])


# --- duality gap -----------------------------------------------------------

def duality_gap(x, grad, s):
    """``<x - s, grad>`` (Frobenius for matrices)."""
    if isinstance(x, TraceNormPoint):
        x = x.dense
    x = np.asarray(x, dtype=np.float64)
    grad = np.asarray(grad, dtype=np.float64)
    if x.shape != grad.shape:
        raise InvalidArgumentError(f"iterate shape {x.shape} != gradient shape {grad.shape}")
    if isinstance(s, Rank1Atom):
        if (s.u.shape[0], s.v.shape[0]) != x.shape:
            raise InvalidArgumentError("atom shape does not match the iterate")
        return float(np.sum(x * grad)) - s.inner(grad)
    s = np.asarray(s, dtype=np.float64)
    if s.shape != x.shape:
        raise InvalidArgumentError(f"iterate shape {x.shape} != LMO output shape {s.shape}")
    return float(np.sum((x - s) * grad))


# --- problem and trace -----------------------------------------------------

@dataclass(frozen=True)
class FwProblem:
    objective: Callable[[Any], float]
    gradient: Callable[[Any], np.ndarray]
    lmo: Any
    x0: Any


@dataclass
class FwTrace:
    iters: list = field(default_factory=list)
    objective: list = field(default_factory=list)
    duality_gap: list = field(default_factory=list)
    step_size: list = field(default_factory=list)
    elapsed_ms: list = field(default_factory=list)

    def append(self, t, obj, gap, gamma, ms):
        self.iters.append(int(t))
        self.objective.append(float(obj))
        self.duality_gap.append(float(gap))
        self.step_size.append(float(gamma))
        self.elapsed_ms.append(float(ms))

    def __len__(self):
        return len(self.iters)

    def rows(self):
        return zip(self.iters, self.objective, self.duality_gap, self.step_size, self.elapsed_ms)

    def to_csv(self, path=None, include_time=True):
        """Write CSV (LF endings, 17 significant digits); return the text.

        ``include_time=False`` writes 0 in ``elapsed_ms`` so that repeated
        runs produce byte-identical files.
        """
        buf = io.StringIO()
        buf.write(",".join(TRACE_HEADER) + "\n")
        for t, obj, gap, gamma, ms in self.rows():
            ms = ms if include_time else 0.0
            buf.write(f"{t},{fmt(obj)},{fmt(gap)},{fmt(gamma)},{fmt(ms)}\n")
        text = buf.getvalue()
        if path is not None:
            with open(path, "w", newline="\n") as fh:
                fh.write(text)
        return text

    @classmethod
    def from_csv(cls, path):
        trace = cls()
        with open(path, newline="") as fh:
            reader = csv.reader(fh)
            header = next(reader, None)
            if header is None or tuple(header) != TRACE_HEADER:
                raise FormatError(f"bad trace header {header!r}", line=1)
            for lineno, row in enumerate(reader, start=2):
                if len(row) != len(TRACE_HEADER):
                    raise FormatError(f"expected {len(TRACE_HEADER)} cells, got {len(row)}", line=lineno)
                try:
                    trace.append(int(row[0]), *(float(c) for c in row[1:]))
                except ValueError as exc:
                    raise FormatError(str(exc), line=lineno) from None
        return trace


def fmt(x):
    x = float(x)
    if math.isnan(x):
        return "nan"
    if math.isinf(x):
        return "inf" if x > 0 else "-inf"
    return format(x, ".17g")


# --- the loop --------------------------------------------------------------

def _copy_iterate(x):
    if isinstance(x, TraceNormPoint):
        return x.copy()
    return np.array(x, dtype=np.float64)


def run_fw(problem, schedule, max_iters, gap_tol=None):
    """Run ``x_{t+1} = (1 - gamma_t) x_t + gamma_t s_t`` for up to ``max_iters`` steps.

    Record ``t`` of the returned trace holds ``f(x_t)``, the gap at ``x_t``
    and ``gamma_t``. With an exact LMO and ``gap_tol`` set, the loop stops
    before updating once the gap drops to ``gap_tol`` or below.
    """
    if max_iters < 1:
        raise InvalidArgumentError(f"max_iters must be >= 1, got {max_iters}")
    x = _copy_iterate(problem.x0)
    lmo = problem.lmo
    state = schedule.init_state() if isinstance(schedule, Learned) else None
    stop_on_gap = gap_tol is not None and getattr(lmo, "exact", False)
    trace = FwTrace()
    start = time.perf_counter()
    for t in range(max_iters):
        try:
            obj = problem.objective(x)
            if not math.isfinite(obj):
                raise NumericalError(f"objective is {obj}")
            grad = problem.gradient(x)
            s = lmo(grad, t)
            gap = duality_gap(x, grad, s)
            gamma = step_size(schedule, t, state)
        except CondGradError as exc:
            raise FwIterationError(t, exc) from exc
        trace.append(t, obj, gap, gamma, 1e3 * (time.perf_counter() - start))
        if stop_on_gap and gap <= gap_tol:
            break
        if isinstance(x, TraceNormPoint):
            x.fw_update(gamma, s)
        else:
            x = (1.0 - gamma) * x + gamma * s
    return x, trace


def parse_schedule(text):
    """``default``, ``harmonic`` or ``const:<c>`` (also a bare number)."""
    text = str(text).strip().lower()
    if text == "default":
        return Default()
    if text == "harmonic":
        return Harmonic()
    if text.startswith("const:"):
        text = text[len("const:"):]
    try:
        return Constant(float(text))
    except ValueError:
        raise InvalidArgumentError(f"unknown schedule {text!r}") from None


def describe_schedule(schedule):
    if isinstance(schedule, Default):
        return "default"
    if isinstance(schedule, Harmonic):
        return "harmonic"
    if isinstance(schedule, Constant):
        return f"const:{schedule.c!r}"
    raise InvalidArgumentError(f"schedule {schedule!r} has no text form")
