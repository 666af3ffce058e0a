"""Per-task sample moments, change estimates and autocorrelation diagnostics."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InputError

__all__ = [
    "VAR_FLOOR",
    "D_INIT",
    "TaskMoments",
    "ChangeEstimate",
    "moments",
    "moments_from_features",
    "merge_moments",
    "estimate_change",
    "window_indices",
    "change_estimates",
    "pacf",
]

VAR_FLOOR = 1e-8
D_INIT = 1e-3


@dataclass(frozen=True, eq=False)
class TaskMoments:
    """Sample mean and variance of the feature vectors of one task.

    ``tau`` and ``sigma2`` have shape ``(..., m)``; leading axes index
    independent sequences processed in lockstep, in which case ``n`` has the
    leading shape.  ``m2`` keeps the unfloored sum of squared deviations so
    that new samples can be pooled exactly.
    """

    task_index: int
    n: np.ndarray
    tau: np.ndarray
    sigma2: np.ndarray
    m2: np.ndarray | None = None

    @property
    def s(self) -> np.ndarray:
        return self.sigma2 / np.asarray(self.n, dtype=float)[..., None]


def _sigma2(m2, n, floor):
    n = np.asarray(n, dtype=float)[..., None]
    with np.errstate(invalid="ignore", divide="ignore"):
        var = np.where(n > 1, m2 / np.maximum(n - 1, 1), 0.0)
    return np.maximum(var, floor)


def moments_from_features(Phi, j: int, var_floor: float = VAR_FLOOR) -> TaskMoments:
    """Moments from a matrix of feature vectors ``(n, m)``."""
    Phi = np.asarray(Phi, dtype=float)
    if Phi.ndim != 2 or Phi.shape[0] == 0:
        raise InputError("moments need a nonempty (n, m) sample")
    n = Phi.shape[0]
    tau = Phi.mean(axis=0)
    m2 = ((Phi - tau) ** 2).sum(axis=0)
    return TaskMoments(j, np.asarray(n), tau, _sigma2(m2, n, var_floor), m2)


def moments(X, y, fmap, j: int, var_floor: float = VAR_FLOOR) -> TaskMoments:
    """Sample mean, unbiased variance (floored) and ``s = sigma2 / n`` of ``phi(x, y)``."""
    X = np.asarray(X, dtype=float)
    if X.ndim != 2 or X.shape[0] == 0:
        raise InputError("moments need a nonempty sample set")
    return moments_from_features(fmap.phi(X, y), j, var_floor)


def merge_moments(a: TaskMoments, Phi_new, var_floor: float = VAR_FLOOR) -> TaskMoments:
    """Pool additional feature vectors into existing moments (pairwise update)."""
    Phi_new = np.asarray(Phi_new, dtype=float)
    if Phi_new.shape[0] == 0:
        return a
    if a.m2 is None:
        raise InputError("moments without sums of squares cannot be pooled")
    b = moments_from_features(Phi_new, a.task_index, var_floor)
    na, nb = float(a.n), float(b.n)
    n = na + nb
    delta = b.tau - a.tau
    tau = a.tau + delta * (nb / n)
    m2 = a.m2 + b.m2 + delta**2 * (na * nb / n)
    return TaskMoments(a.task_index, np.asarray(int(n)), tau, _sigma2(m2, int(n), var_floor), m2)


@dataclass(frozen=True, eq=False)
class ChangeEstimate:
    """Expected quadratic change ``d_j`` between tasks ``j-1`` and ``j``."""

    task_index: int
    d: np.ndarray
    window: int


def estimate_change(means, W: int | None = None, d_init: float = D_INIT, j: int = 0) -> ChangeEstimate:
    """Average squared difference of consecutive means.

    ``means`` holds ``W + 1`` mean vectors in index order.  With fewer than
    two means the configured ``d_init`` is returned.
    """
    means = [np.asarray(t, dtype=float) for t in means]
    if W is None:
        W = len(means) - 1
    if W < 1 and len(means) >= 2:
        raise InputError("window must be at least 1")
    if len(means) < 2:
        shape = means[0].shape if means else ()
        return ChangeEstimate(j, np.full(shape, d_init) if shape else np.asarray(d_init), max(W, 1))
    if len(means) != W + 1:
        raise InputError(f"expected {W + 1} means for window {W}, got {len(means)}")
    diffs = np.diff(np.stack(means), axis=0)
    return ChangeEstimate(j, (diffs**2).sum(axis=0) / W, W)


def window_indices(j: int, k: int, W: int, mode: str) -> list[int]:
    """1-based task indices entering the change estimate of task ``j``.

    ``trailing`` uses the ``W + 1`` most recent indices ``<= j``.  ``centered``
    uses the ``W + 1`` indices in ``1..k`` closest to ``j``, ties broken toward
    the smaller index.
    """
    if mode == "trailing":
        return list(range(max(1, j - W), j + 1))
    if mode == "centered":
        order = sorted(range(1, k + 1), key=lambda i: (abs(i - j), i))
        return sorted(order[: W + 1])
    raise InputError(f"unknown window mode {mode!r}")


def change_estimates(taus, W: int = 2, mode: str = "centered", d_init: float = D_INIT, upto: int | None = None):
    """Change estimates ``d_1..d_k`` for a sequence of sample means.

    ``taus[i]`` is the mean of task ``i + 1`` (leading batch axes allowed).
    Only means with index ``<= upto`` are visible (default: all).  ``d_1`` is
    returned for completeness but no recursion consumes it.
    """
    k = len(taus)
    visible = k if upto is None else min(upto, k)
    out = []
    for j in range(1, k + 1):
        idx = window_indices(min(j, visible) if mode == "trailing" else j, visible, W, mode)
        if mode == "trailing":
            idx = [i for i in idx if i <= visible]
        sel = [taus[i - 1] for i in idx]
        out.append(estimate_change(sel, len(sel) - 1, d_init, j))
    return out


def pacf(series, max_lag: int) -> np.ndarray:
    """Partial autocorrelation at lags ``1..max_lag``.

    Durbin-Levinson recursion on the biased sample autocovariances.  A
    constant series has no defined autocorrelation and yields zeros.
    """
    x = np.asarray(series, dtype=float).ravel()
    T = x.size
    if max_lag < 1 or T <= max_lag + 1:
        raise InputError("series length must exceed max_lag + 1")
    x = x - x.mean()
    c0 = x @ x / T
    if c0 <= 1e-14 * max(1.0, np.max(np.abs(series))) ** 2:
        return np.zeros(max_lag)
    r = np.array([x[: T - h] @ x[h:] / T for h in range(max_lag + 1)]) / c0
    out = np.empty(max_lag)
    phi_prev = np.zeros(0)
    v = 1.0
    for h in range(1, max_lag + 1):
        a = (r[h] - phi_prev @ r[h - 1 : 0 : -1]) / v if h > 1 else r[1]
        phi = np.empty(h)
        phi[:-1] = phi_prev - a * phi_prev[::-1]
        phi[-1] = a
        v *= 1.0 - a * a
        out[h - 1] = a
        phi_prev = phi
    return out


def stack_moments(items) -> TaskMoments:
    """Stack moments of the same task from independent sequences along a new leading axis."""
    items = list(items)
    j = items[0].task_index
    if any(it.task_index != j for it in items):
        raise InputError("stacked moments must share a task index")
    m2 = None if any(it.m2 is None for it in items) else np.stack([it.m2 for it in items])
    return TaskMoments(
        j,
        np.array([it.n for it in items]),
        np.stack([it.tau for it in items]),
        np.stack([it.sigma2 for it in items]),
        m2,
    )
