"""Recursive tracking of per-task mean vectors.

All recursions act componentwise and broadcast over leading axes, so a batch
of independent sequences can be advanced in one call.
"""

from __future__ import annotations

import json
import math
import warnings
from dataclasses import dataclass

import numpy as np

from .errors import ContractError, InputError
from .task_stats import ChangeEstimate, TaskMoments

__all__ = [
    "TrackedEstimate",
    "KinematicState",
    "initial_estimate",
    "single_task_estimate",
    "forward_step",
    "predict_step",
    "backward_step",
    "smooth_sequence",
    "transition_matrix",
    "noise_vector",
    "kin_initial_state",
    "kin_forward_step",
    "kin_predict_step",
    "kin_backward_step",
    "kin_smooth_sequence",
    "adapt_dbar",
    "dump_snapshot",
    "load_snapshot",
]

HORIZONS = ("single", "forward", "smoothed", "predicted")
SNAPSHOT_VERSION = 1


@dataclass(frozen=True, eq=False)
class TrackedEstimate:
    """Mean estimate ``tau_hat`` with componentwise MSE ``s_hat``.

    ``through`` is the last task whose samples entered the estimate: ``j``
    for forward, ``k`` for smoothed and ``j - 1`` for predicted estimates.
    """

    task_index: int
    horizon: str
    tau_hat: np.ndarray
    s_hat: np.ndarray
    through: int

    def __post_init__(self):
        if self.horizon not in HORIZONS:
            raise ContractError(f"unknown horizon {self.horizon!r}")


def _d(d, j=None):
    if isinstance(d, ChangeEstimate):
        if j is not None and d.task_index not in (0, j):
            raise ContractError(f"change estimate for task {d.task_index} used at task {j}")
        return np.asarray(d.d, dtype=float)
    return np.asarray(d, dtype=float)


def single_task_estimate(cur: TaskMoments) -> TrackedEstimate:
    return TrackedEstimate(cur.task_index, "single", cur.tau, cur.s, cur.task_index)


def initial_estimate(cur: TaskMoments) -> TrackedEstimate:
    """Forward estimate of the first task: the raw moments."""
    return TrackedEstimate(cur.task_index, "forward", cur.tau, cur.s, cur.task_index)


def forward_step(prev: TrackedEstimate, cur: TaskMoments, d) -> TrackedEstimate:
    """Blend the previous forward estimate with the sample mean of task ``j``."""
    j = cur.task_index
    if prev.horizon != "forward" or prev.task_index != j - 1:
        raise ContractError(f"forward step to task {j} needs the forward estimate of task {j - 1}")
    d = _d(d, j)
    s = cur.s
    prior = prev.s_hat + d
    eta = prior / (s + prior)
    tau = prev.tau_hat + eta * (cur.tau - prev.tau_hat)
    return TrackedEstimate(j, "forward", tau, eta * s, j)


def predict_step(prev: TrackedEstimate, d) -> TrackedEstimate:
    """Estimate for task ``j`` before any of its samples are seen."""
    if prev.horizon != "forward":
        raise ContractError("prediction starts from a forward estimate")
    j = prev.task_index + 1
    return TrackedEstimate(j, "predicted", prev.tau_hat, prev.s_hat + _d(d, j), prev.task_index)


def backward_step(next_smoothed: TrackedEstimate, cur_forward: TrackedEstimate, d_next) -> TrackedEstimate:
    """Refine the forward estimate of task ``j`` with the smoothed estimate of ``j + 1``."""
    j = cur_forward.task_index
    if cur_forward.horizon != "forward" or next_smoothed.task_index != j + 1:
        raise ContractError(f"backward step to task {j} needs the smoothed estimate of task {j + 1}")
    if next_smoothed.horizon not in ("smoothed", "forward"):
        raise ContractError("backward step needs a smoothed successor")
    d = _d(d_next, j + 1)
    sj = cur_forward.s_hat
    nxt = next_smoothed.s_hat
    with np.errstate(invalid="ignore", divide="ignore"):
        eta = np.where(sj + d > 0, d / (sj + d), 1.0)
        keep = np.where(sj + d > 0, sj / (sj + d), 0.0)
    tau = next_smoothed.tau_hat + eta * (cur_forward.tau_hat - next_smoothed.tau_hat)
    # (1 - eta)^2 s_next + eta s_j, written without cancellation
    s_hat = keep * keep * nxt + eta * sj
    return TrackedEstimate(j, "smoothed", tau, s_hat, next_smoothed.through)


def _clamp_b(b, k):
    if b is None:
        return k - 1
    if b < 0:
        raise InputError("number of backward steps must be nonnegative")
    if b > k - 1:
        warnings.warn(f"b={b} exceeds k-1={k - 1}; clamped", RuntimeWarning, stacklevel=3)
        return k - 1
    return b


def _change_for(changes, j):
    """``changes`` is aligned with tasks: entry ``i`` is ``d_{i+1}``."""
    return changes[j - 1]


def smooth_sequence(forwards, changes, b: int | None = None) -> list[TrackedEstimate]:
    """Smoothed estimates of tasks ``k - b .. k`` in ascending order.

    ``b=None`` smooths the whole sequence.  The estimate of task ``k`` is its
    forward estimate relabelled as smoothed.
    """
    k = len(forwards)
    if k == 0:
        raise InputError("nothing to smooth")
    b = _clamp_b(b, k)
    last = forwards[-1]
    cur = TrackedEstimate(k, "smoothed", last.tau_hat, last.s_hat, k)
    out = [cur]
    for j in range(k - 1, k - b - 1, -1):
        cur = backward_step(cur, forwards[j - 1], _change_for(changes, j + 1))
        out.append(cur)
    return out[::-1]


# kinematic (order-p) tracker -------------------------------------------------


@dataclass(frozen=True, eq=False)
class KinematicState:
    """State mean ``gamma (..., m, p+1)`` and MSE ``Sigma (..., m, p+1, p+1)``.

    Entry 0 of each state vector is the tracked mean component; entries
    ``1..p`` are its successive derivatives with respect to time.
    """

    task_index: int
    horizon: str
    gamma: np.ndarray
    Sigma: np.ndarray
    through: int

    @property
    def order(self) -> int:
        return self.gamma.shape[-1] - 1

    def as_estimate(self) -> TrackedEstimate:
        return TrackedEstimate(self.task_index, self.horizon, self.gamma[..., 0], self.Sigma[..., 0, 0], self.through)


def transition_matrix(p: int, delta: float) -> np.ndarray:
    """``I + sum_s delta^s U_s / s!`` with ``U_s`` ones on the s-th superdiagonal."""
    T = np.eye(p + 1)
    for s in range(1, p + 1):
        T += np.eye(p + 1, k=s) * (delta**s / math.factorial(s))
    return T


def noise_vector(p: int, delta: float) -> np.ndarray:
    """``[delta^{p+1}/(p+1)!, ..., delta]``: how a unit jerk reaches each state entry."""
    return np.array([delta ** (p + 1 - i) / math.factorial(p + 1 - i) for i in range(p + 1)])


def kin_initial_state(cur: TaskMoments, p: int) -> KinematicState:
    if p < 0:
        raise InputError("kinematic order must be nonnegative")
    shape = cur.tau.shape
    gamma = np.zeros(shape + (p + 1,))
    gamma[..., 0] = cur.tau
    Sigma = np.zeros(shape + (p + 1, p + 1))
    Sigma[..., 0, 0] = cur.s
    j = cur.task_index
    return KinematicState(j, "forward", gamma, Sigma, j)


def _predict(state: KinematicState, dbar, delta):
    p = state.order
    T = transition_matrix(p, delta)
    g = noise_vector(p, delta)
    gam = state.gamma @ T.T
    P = T @ state.Sigma @ T.T + np.multiply.outer(np.asarray(dbar, dtype=float), np.outer(g, g))
    return gam, P


def kin_predict_step(prev: KinematicState, dbar, delta: float = 1.0) -> KinematicState:
    if prev.horizon != "forward":
        raise ContractError("prediction starts from a forward state")
    gam, P = _predict(prev, dbar, delta)
    return KinematicState(prev.task_index + 1, "predicted", gam, P, prev.task_index)


def kin_forward_step(prev: KinematicState, cur: TaskMoments, dbar, delta: float = 1.0) -> KinematicState:
    """Kalman update of every component's state with the sample mean of task ``j``."""
    j = cur.task_index
    if prev.horizon != "forward" or prev.task_index != j - 1:
        raise ContractError(f"forward step to task {j} needs the forward state of task {j - 1}")
    if not delta > 0:
        raise InputError("time increment must be positive")
    gam, P = _predict(prev, dbar, delta)
    denom = P[..., 0, 0] + cur.s
    denom = np.where(denom > 0, denom, np.finfo(float).tiny)
    eta = P[..., :, 0] / denom[..., None]
    gamma = gam + eta * (cur.tau - gam[..., 0])[..., None]
    Sigma = P - eta[..., :, None] * P[..., 0, None, :]
    Sigma = 0.5 * (Sigma + np.swapaxes(Sigma, -1, -2))
    return KinematicState(j, "forward", gamma, Sigma, j)


def kin_backward_step(nxt: KinematicState, cur: KinematicState, dbar_next, delta_next: float = 1.0) -> KinematicState:
    """Smoothing step from task ``j + 1`` back to ``j`` using ``T_{j+1}`` and ``D_{j+1}``."""
    j = cur.task_index
    if cur.horizon != "forward" or nxt.task_index != j + 1:
        raise ContractError(f"backward step to task {j} needs the smoothed state of task {j + 1}")
    p = cur.order
    T = transition_matrix(p, delta_next)
    gam_pred, P = _predict(cur, dbar_next, delta_next)
    cross = cur.Sigma @ T.T
    # H = cross @ inv(P); solve the transposed system P^T H^T = cross^T
    try:
        cond = np.linalg.cond(P)
        bad = ~np.isfinite(cond) | (cond > 1e10)
    except np.linalg.LinAlgError:
        bad = np.ones(P.shape[:-2], dtype=bool)
    if np.any(bad):
        warnings.warn("near-singular innovation matrix; using pseudo-inverse", RuntimeWarning, stacklevel=2)
        H = cross @ np.linalg.pinv(P, rcond=1e-10, hermitian=True)
    else:
        H = np.swapaxes(np.linalg.solve(P, np.swapaxes(cross, -1, -2)), -1, -2)
    gamma = cur.gamma + (H @ (nxt.gamma - gam_pred)[..., None])[..., 0]
    Sigma = cur.Sigma + H @ (nxt.Sigma - P) @ np.swapaxes(H, -1, -2)
    Sigma = 0.5 * (Sigma + np.swapaxes(Sigma, -1, -2))
    return KinematicState(j, "smoothed", gamma, Sigma, nxt.through)


def kin_smooth_sequence(forwards, dbars, deltas=None, b: int | None = None) -> list[KinematicState]:
    """Smoothed states of tasks ``k - b .. k`` (ascending).

    ``dbars[i]`` and ``deltas[i]`` belong to task ``i + 1``.
    """
    k = len(forwards)
    if k == 0:
        raise InputError("nothing to smooth")
    b = _clamp_b(b, k)
    deltas = [1.0] * k if deltas is None else deltas
    last = forwards[-1]
    cur = KinematicState(k, "smoothed", last.gamma, last.Sigma, k)
    out = [cur]
    for j in range(k - 1, k - b - 1, -1):
        cur = kin_backward_step(cur, forwards[j - 1], dbars[j], deltas[j])
        out.append(cur)
    return out[::-1]


def adapt_dbar(prev_dbar, innovation, predicted_var, beta: float = 0.3) -> np.ndarray:
    """Exponentially forgotten moment matching of the process-noise level."""
    if not 0 <= beta <= 1:
        raise InputError("forgetting factor must lie in [0, 1]")
    excess = np.maximum(np.asarray(innovation, dtype=float) ** 2 - predicted_var, 0.0)
    return (1.0 - beta) * np.asarray(prev_dbar, dtype=float) + beta * excess


# snapshots -------------------------------------------------------------------


def dump_snapshot(state: TrackedEstimate | KinematicState) -> str:
    """Versioned JSON text snapshot; arrays are stored row-major with their shape."""
    if isinstance(state, KinematicState):
        arrays = {"gamma": state.gamma, "Sigma": state.Sigma}
        kind = "kinematic"
    else:
        arrays = {"tau_hat": state.tau_hat, "s_hat": state.s_hat}
        kind = "base"
    doc = {
        "format": "evomrc-tracker",
        "version": SNAPSHOT_VERSION,
        "kind": kind,
        "task_index": state.task_index,
        "horizon": state.horizon,
        "through": state.through,
        "arrays": {
            k: {"shape": list(np.shape(v)), "data": np.asarray(v, dtype=float).ravel(order="C").tolist()}
            for k, v in arrays.items()
        },
    }
    return json.dumps(doc)


def load_snapshot(text: str) -> TrackedEstimate | KinematicState:
    doc = json.loads(text)
    if doc.get("format") != "evomrc-tracker":
        raise InputError("not a tracker snapshot")
    if doc.get("version") != SNAPSHOT_VERSION:
        raise InputError(f"unsupported snapshot version {doc.get('version')}")
    arr = {k: np.array(v["data"], dtype=float).reshape(v["shape"]) for k, v in doc["arrays"].items()}
    if doc["kind"] == "kinematic":
        return KinematicState(doc["task_index"], doc["horizon"], arr["gamma"], arr["Sigma"], doc["through"])
    return TrackedEstimate(doc["task_index"], doc["horizon"], arr["tau_hat"], arr["s_hat"], doc["through"])
