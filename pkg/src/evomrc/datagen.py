"""Synthetic task streams and CSV task-sequence ingestion.

CSV schema: a header row, floating-point feature columns, an integer label
column with values ``1..|Y|``, and optionally a task column and a ``split``
column (``train``/``test``).  Labels are shifted to ``0..|Y|-1`` on ingest.
"""

from __future__ import annotations

import csv
import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .errors import InputError

__all__ = [
    "Task",
    "TaskSequence",
    "HyperplaneStream",
    "HyperplaneOracle",
    "gen_hyperplane",
    "rep_rng",
    "CsvTaskSpec",
    "ingest_csv",
    "write_csv",
    "subsample",
    "random_walk_means",
]


@dataclass(frozen=True, eq=False)
class Task:
    X: np.ndarray
    y: np.ndarray
    X_test: np.ndarray | None = None
    y_test: np.ndarray | None = None
    time: float | None = None

    @property
    def n(self) -> int:
        return int(self.X.shape[0])


@dataclass(frozen=True, eq=False)
class TaskSequence:
    tasks: tuple
    n_labels: int

    def __post_init__(self):
        object.__setattr__(self, "tasks", tuple(self.tasks))
        if not self.tasks:
            raise InputError("a task sequence needs at least one task")
        dims = {t.X.shape[1] for t in self.tasks if t.X.ndim == 2}
        if len(dims) > 1:
            raise InputError("tasks have inconsistent feature dimensions")

    @property
    def k(self) -> int:
        return len(self.tasks)

    @property
    def input_dim(self) -> int:
        return int(self.tasks[0].X.shape[1])

    def deltas(self) -> list[float]:
        """Time increments; entry ``i`` is the gap before task ``i + 1`` (1 when untimed)."""
        times = [t.time for t in self.tasks]
        if any(t is None for t in times):
            return [1.0] * self.k
        return [1.0] + [float(b - a) for a, b in zip(times[:-1], times[1:])]

    def replace_task(self, i: int, task: Task) -> "TaskSequence":
        tasks = list(self.tasks)
        tasks[i] = task
        return TaskSequence(tasks, self.n_labels)


def rep_rng(seed: int, rep: int = 0) -> np.random.Generator:
    """Independent stream for repetition ``rep`` of a run seeded with ``seed``."""
    return np.random.default_rng(np.random.SeedSequence(int(seed), spawn_key=(int(rep),)))


@dataclass(frozen=True)
class HyperplaneStream:
    dim: int = 2
    mode: str = "rotate"
    angle: float = 5.0
    sigma_w: float = 0.1
    multi: bool = True
    k: int = 100
    n: int = 10
    n_test: int = 100
    seed: int = 0
    initial_angle: float = 0.0

    def __post_init__(self):
        if self.mode not in ("rotate", "random_walk"):
            raise InputError(f"unknown hyperplane mode {self.mode!r}; expected 'rotate' or 'random_walk'")
        if self.dim < 1 or (self.mode == "rotate" and self.dim < 2):
            raise InputError("rotate mode needs at least two dimensions")
        if self.k < 1 or self.n < 0 or self.n_test < 0:
            raise InputError("k must be positive and sample sizes nonnegative")
        if self.sigma_w < 0:
            raise InputError("sigma_w must be nonnegative")


def _rotation(dim, rad):
    R = np.eye(dim)
    c, s = math.cos(rad), math.sin(rad)
    R[:2, :2] = [[c, -s], [s, c]]
    return R


def hyperplane_weights(spec: HyperplaneStream, rng: np.random.Generator) -> np.ndarray:
    D = spec.dim
    if spec.mode == "rotate":
        w = _rotation(D, math.radians(spec.initial_angle))[:, 0]
        step = _rotation(D, math.radians(spec.angle))
        W = [w]
        for _ in range(spec.k - 1):
            W.append(step @ W[-1])
        return np.array(W)
    w = rng.standard_normal(D)
    W = [w]
    for _ in range(spec.k - 1):
        inc = rng.standard_normal(D) if spec.multi else rng.standard_normal() * np.ones(D)
        W.append(W[-1] + spec.sigma_w * inc)
    return np.array(W)


def hyperplane_labels(X, w) -> np.ndarray:
    """Label 0 when ``w @ x >= 0``, else 1."""
    return (np.asarray(X) @ w < 0).astype(np.int64)


@dataclass(frozen=True, eq=False)
class HyperplaneOracle:
    """True hyperplanes, for exact labels and Monte-Carlo feature expectations."""

    weights: np.ndarray
    _cache: dict = field(default_factory=dict, repr=False)

    def labels(self, X, j: int) -> np.ndarray:
        return hyperplane_labels(X, self.weights[j - 1])

    def tau_inf(self, fmap, j: int, n_mc: int = 10**6, seed: int = 12345, chunk: int = 200_000) -> np.ndarray:
        """Monte-Carlo expectation of ``phi(x, y)`` under task ``j``; cached per fmap/size/seed."""
        key = (id(fmap), j, n_mc, seed)
        if key in self._cache:
            return self._cache[key]
        rng = np.random.default_rng(seed)
        D = self.weights.shape[1]
        total = np.zeros(fmap.m)
        left = n_mc
        while left > 0:
            b = min(chunk, left)
            X = rng.uniform(-1.0, 1.0, size=(b, D))
            total += fmap.phi(X, self.labels(X, j)).sum(axis=0)
            left -= b
        out = total / n_mc
        self._cache[key] = out
        return out


def gen_hyperplane(spec: HyperplaneStream, rep: int = 0) -> tuple[TaskSequence, HyperplaneOracle]:
    """Generate one repetition of a hyperplane stream with instances uniform on ``[-1, 1]^D``."""
    rng = rep_rng(spec.seed, rep)
    W = hyperplane_weights(spec, rng)
    tasks = []
    for j in range(spec.k):
        X = rng.uniform(-1.0, 1.0, size=(spec.n + spec.n_test, spec.dim))
        y = hyperplane_labels(X, W[j])
        tasks.append(Task(X[: spec.n], y[: spec.n], X[spec.n :], y[spec.n :]))
    return TaskSequence(tasks, 2), HyperplaneOracle(W)


def random_walk_means(k: int, m: int, d: float, s: float, rng: np.random.Generator) -> np.ndarray:
    """Sample means of a random-walk mean sequence: increments with variance ``d``, noise ``s``."""
    walk = np.cumsum(rng.normal(0.0, math.sqrt(d), size=(k, m)), axis=0)
    return walk + rng.normal(0.0, math.sqrt(s), size=(k, m))


# CSV ------------------------------------------------------------------------


@dataclass(frozen=True)
class CsvTaskSpec:
    path: str
    label_column: str = "label"
    task_column: str | None = None
    segment_size: int = 300
    feature_columns: tuple | None = None
    test_per_task: int = 100
    split_column: str = "split"
    seed: int = 0


def _float(v, line, col):
    try:
        return float(v)
    except ValueError:
        raise InputError(f"line {line}: column {col!r} is not a number: {v!r}") from None


def _read_rows(path):
    try:
        fh = open(path, newline="")
    except OSError as exc:
        raise InputError(f"cannot read {path}: {exc.strerror}") from None
    with fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise InputError(f"{path}: empty file") from None
        rows = []
        for row in reader:
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(header):
                raise InputError(f"line {reader.line_num}: expected {len(header)} fields, got {len(row)}")
            rows.append((reader.line_num, row))
    return header, rows


def ingest_csv(spec: CsvTaskSpec) -> TaskSequence:
    """Read a task sequence; segments and splits are deterministic for fixed settings."""
    header, rows = _read_rows(spec.path)
    if spec.label_column not in header:
        raise InputError(f"label column {spec.label_column!r} not found in header {header}")
    if spec.task_column is not None and spec.task_column not in header:
        raise InputError(f"task column {spec.task_column!r} not found")
    has_split = spec.split_column in header
    reserved = {spec.label_column, spec.task_column, spec.split_column if has_split else None}
    feats = list(spec.feature_columns) if spec.feature_columns else [h for h in header if h not in reserved]
    missing = [f for f in feats if f not in header]
    if missing or not feats:
        raise InputError(f"feature columns missing: {missing}" if missing else "no feature columns")
    fi = [header.index(f) for f in feats]
    li = header.index(spec.label_column)
    ti = header.index(spec.task_column) if spec.task_column else None
    si = header.index(spec.split_column) if has_split else None

    X = np.empty((len(rows), len(fi)))
    y = np.empty(len(rows), dtype=np.int64)
    keys, splits = [], []
    for r, (line, row) in enumerate(rows):
        X[r] = [_float(row[i], line, header[i]) for i in fi]
        lab = _float(row[li], line, spec.label_column)
        if lab != int(lab) or lab < 1:
            raise InputError(f"line {line}: labels must be integers 1..|Y|, got {row[li]!r}")
        y[r] = int(lab) - 1
        keys.append(row[ti] if ti is not None else r // spec.segment_size)
        if si is not None:
            sp = row[si].strip()
            if sp not in ("train", "test"):
                raise InputError(f"line {line}: split must be 'train' or 'test', got {sp!r}")
            splits.append(sp)
    if len(rows) == 0:
        raise InputError(f"{spec.path}: no data rows")
    n_labels = max(2, int(y.max()) + 1)

    order = list(dict.fromkeys(keys))
    keys = np.array(keys, dtype=object)
    rng = np.random.default_rng(spec.seed)
    tasks = []
    for t, key in enumerate(order):
        idx = np.flatnonzero(keys == key)
        if si is not None:
            is_test = np.array([splits[i] == "test" for i in idx])
        else:
            if idx.size < spec.test_per_task + 1:
                warnings.warn(f"task {t + 1} has {idx.size} rows (< {spec.test_per_task + 1}); dropped", RuntimeWarning)
                continue
            is_test = np.zeros(idx.size, dtype=bool)
            is_test[rng.choice(idx.size, spec.test_per_task, replace=False)] = True
        tr, te = idx[~is_test], idx[is_test]
        tasks.append(Task(X[tr], y[tr], X[te] if te.size else None, y[te] if te.size else None))
    return TaskSequence(tasks, n_labels)


def write_csv(seq: TaskSequence, path: str, feature_names=None) -> None:
    """Write a sequence with task and split columns; floats are written round-trip exact."""
    D = seq.input_dim
    names = list(feature_names) if feature_names else [f"x{i + 1}" for i in range(D)]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(names + ["label", "task", "split"])
        for j, t in enumerate(seq.tasks, start=1):
            for split, Xs, ys in (("train", t.X, t.y), ("test", t.X_test, t.y_test)):
                if Xs is None:
                    continue
                for x, lab in zip(Xs, ys):
                    w.writerow([repr(float(v)) for v in x] + [int(lab) + 1, j, split])


def subsample(seq: TaskSequence, n: int, rng: np.random.Generator) -> TaskSequence:
    """Draw ``n`` training samples per task from each task's training pool."""
    tasks = []
    for t in seq.tasks:
        if t.n < n:
            raise InputError(f"task pool has {t.n} training samples, fewer than n={n}")
        idx = np.sort(rng.choice(t.n, n, replace=False))
        tasks.append(Task(t.X[idx], t.y[idx], t.X_test, t.y_test, t.time))
    return TaskSequence(tasks, seq.n_labels)
