"""Synthetic generators, CSV ingestion and seeded three-way splits.

CSV layout: header ``feature_0,...,feature_{d-1},label``; LF line endings;
floats written with 17 significant digits. Labels are ``-1``/``+1`` for
binary data or class ids ``0..K-1`` for multiclass data.
"""
import math
from dataclasses import dataclass

import numpy as np

from .errors import FormatError, InvalidArgumentError
from .fw import fmt
from .softmax import MulticlassDataset
from .svm import LabeledDataset


@dataclass(frozen=True)
class Circles:
    n: int = 200
    inner: float = 1.0
    outer: float = 2.0
    noise: float = 0.1
    seed: int = 0


@dataclass(frozen=True)
class LowRankMulticlass:
    n: int = 2000
    features: int = 40
    classes: int = 5
    rank: int = 3
    label_noise: float = 0.0
    seed: int = 0


@dataclass(frozen=True)
class CsvFile:
    path: str
    label_column: str = "label"


@dataclass(frozen=True)
class SplitSpec:
    fractions: tuple = (1 / 3, 1 / 3, 1 / 3)
    seed: int = 0


def _circles(spec):
    if spec.n < 2 or not 0 < spec.inner < spec.outer or spec.noise < 0:
        raise InvalidArgumentError(f"invalid circles spec {spec}")
    rng = np.random.default_rng(spec.seed)
    n_in = spec.n // 2
    radii = np.where(np.arange(spec.n) < n_in, spec.inner, spec.outer)
    labels = np.where(np.arange(spec.n) < n_in, -1.0, 1.0)
    angles = rng.uniform(0.0, 2.0 * math.pi, spec.n)
    radii = radii + spec.noise * rng.standard_normal(spec.n)
    x = np.column_stack([radii * np.cos(angles), radii * np.sin(angles)])
    order = rng.permutation(spec.n)
    return LabeledDataset(x[order], labels[order])


def planted_low_rank(spec):
    """Dataset plus the planted weight matrix ``W = A B`` (classes x features)."""
    if min(spec.n, spec.features, spec.classes, spec.rank) < 1 or spec.classes < 2:
        raise InvalidArgumentError(f"invalid low-rank spec {spec}")
    if spec.rank > min(spec.classes, spec.features) or spec.label_noise < 0:
        raise InvalidArgumentError(f"invalid low-rank spec {spec}")
    rng = np.random.default_rng(spec.seed)
    a = rng.standard_normal((spec.classes, spec.rank))
    b = rng.standard_normal((spec.rank, spec.features))
    w = a @ b / math.sqrt(spec.rank * spec.features)
    x = rng.standard_normal((spec.n, spec.features))
    logits = x @ w.T
    if spec.label_noise > 0:
        logits = logits + spec.label_noise * rng.standard_normal(logits.shape)
    return MulticlassDataset(x, np.argmax(logits, axis=1), spec.classes), w


def generate(spec):
    if isinstance(spec, Circles):
        return _circles(spec)
    if isinstance(spec, LowRankMulticlass):
        return planted_low_rank(spec)[0]
    if isinstance(spec, CsvFile):
        return load_csv(spec.path, spec.label_column)
    raise InvalidArgumentError(f"unknown dataset spec {spec!r}")


def random_qp_kernel(n, seed, rank=None):
    """Random PSD matrix ``A^T A / rank`` with ``A`` of shape ``(rank, n)``."""
    rank = n if rank is None else rank
    rng = np.random.default_rng(seed)
    a = rng.standard_normal((rank, n))
    K = a.T @ a / rank
    return 0.5 * (K + K.T)


def _subset(data, idx):
    if isinstance(data, LabeledDataset):
        return LabeledDataset(data.x[idx], data.y[idx])
    return data.subset(idx)


def split_sizes(n, fractions):
    fractions = tuple(float(f) for f in fractions)
    if len(fractions) != 3 or any(f <= 0 for f in fractions) or abs(sum(fractions) - 1.0) > 1e-12:
        raise InvalidArgumentError(f"fractions must be three positive numbers summing to 1, got {fractions}")
    first = int(math.floor(fractions[0] * n + 1e-9))
    second = int(math.floor(fractions[1] * n + 1e-9))
    sizes = (first, second, n - first - second)
    if min(sizes) < 1:
        raise InvalidArgumentError(f"split of {n} samples by {fractions} leaves an empty part")
    return sizes


def split(data, spec):
    """Seeded shuffle, then contiguous slices: (optimizee-train, optimizer-train, test)."""
    a, b, _ = split_sizes(data.n, spec.fractions)
    order = np.random.default_rng(spec.seed).permutation(data.n)
    return _subset(data, order[:a]), _subset(data, order[a:a + b]), _subset(data, order[a + b:])


# --- CSV -------------------------------------------------------------------

def write_csv(data, path):
    labels = data.y.astype(int) if isinstance(data, LabeledDataset) else data.labels
    lines = [",".join([f"feature_{j}" for j in range(data.d)] + ["label"])]
    for row, label in zip(data.x, labels):
        lines.append(",".join([fmt(v) for v in row] + [str(int(label))]))
    with open(path, "w", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")


def read_table(path, label_column="label", require_label=True):
    """Parse a feature CSV into ``(x, labels or None)``."""
    with open(path, newline="") as fh:
        lines = fh.read().splitlines()
    if not lines or not lines[0].strip():
        raise FormatError(f"{path}: empty file", line=1)
    header = [h.strip() for h in lines[0].split(",")]
    if label_column in header:
        label_idx = header.index(label_column)
    elif require_label:
        raise FormatError(f"no {label_column!r} column in header", line=1)
    else:
        label_idx = None
    width = len(header)
    rows = []
    for lineno, text in enumerate(lines[1:], start=2):
        if not text.strip():
            continue
        cells = text.split(",")
        if len(cells) != width:
            raise FormatError(f"expected {width} cells, got {len(cells)}", line=lineno)
        try:
            rows.append([float(c) for c in cells])
        except ValueError:
            raise FormatError(f"non-numeric cell in {text!r}", line=lineno) from None
    if not rows:
        raise FormatError(f"{path}: no data rows")
    table = np.array(rows)
    if not np.all(np.isfinite(table)):
        raise FormatError(f"{path}: non-finite values")
    if label_idx is None:
        return table, None
    return np.delete(table, label_idx, axis=1), table[:, label_idx]


def load_csv(path, label_column="label"):
    x, labels = read_table(path, label_column)
    if np.all((labels == 1.0) | (labels == -1.0)) and np.any(labels == -1.0):
        return LabeledDataset(x, labels)
    if np.all(labels >= 0) and np.all(labels == np.round(labels)):
        return MulticlassDataset(x, labels.astype(np.int64), int(labels.max()) + 1)
    raise FormatError(f"{path}: labels must be -1/+1 or class ids >= 0")
