"""Minimax risk classifiers: constraint rows, dual solver, decision rules and bounds.

The dual objective is

    1 - tau @ mu + phi(mu) + lam @ |mu|,   phi(mu) = max_i (F[i] @ mu - h[i]),

where every row of ``(F, h)`` pairs an anchor instance ``x`` with a nonempty
label subset ``C``: ``F[i] = sum_{y in C} phi(x, y) / |C|`` and ``h[i] = 1/|C|``.
The solver batches independent problems; padded rows carry ``h = +inf`` and
never attain the max.
"""

from __future__ import annotations

import itertools
import json
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from .errors import ConfigError, InputError, NumericalError
from .features import FeatureMap

__all__ = [
    "MAX_LABELS",
    "Constraints",
    "UncertaintySpec",
    "SolverConfig",
    "MrcModel",
    "ErrorBound",
    "build_constraints",
    "label_subsets",
    "phi_of_mu",
    "objective",
    "uncertainty_from_estimate",
    "solve",
    "solve_batch",
    "classify_prob",
    "classify_det",
    "expected_error",
    "error_bound",
    "dump_model",
    "load_model",
]

MAX_LABELS = 12
MODEL_VERSION = 1
C_TOL = 1e-12


@dataclass(frozen=True, eq=False)
class Constraints:
    F: np.ndarray
    h: np.ndarray
    n_labels: int

    @property
    def n_rows(self) -> int:
        return self.F.shape[0]


def label_subsets(n_labels: int) -> np.ndarray:
    """Weights ``1_C / |C|`` of every nonempty subset, by size then lexicographically."""
    if n_labels > MAX_LABELS:
        raise ConfigError(
            f"{n_labels} labels exceed the limit of {MAX_LABELS}: the constraint rows grow as 2^|Y| "
            "and the solver costs O(n 2^|Y| K m)"
        )
    rows = []
    for size in range(1, n_labels + 1):
        for C in itertools.combinations(range(n_labels), size):
            w = np.zeros(n_labels)
            w[list(C)] = 1.0 / size
            rows.append(w)
    return np.array(rows)


def build_constraints(instances, fmap: FeatureMap) -> Constraints:
    """Constraint rows over the distinct anchor instances."""
    X = np.asarray(instances, dtype=float)
    if X.ndim == 1:
        X = X[None, :]
    if X.shape[0] == 0:
        raise InputError("constraint construction needs at least one anchor instance")
    S = label_subsets(fmap.n_labels)
    X = np.unique(X, axis=0)
    psi = fmap.embed(X)
    F = np.einsum("cy,nq->ncyq", S, psi).reshape(-1, fmap.m)
    h = np.tile(1.0 / S.astype(bool).sum(axis=1), X.shape[0])
    return Constraints(F, h, fmap.n_labels)


def phi_of_mu(F, h, mu):
    """Return ``(max_i F[i] @ mu - h[i], argmax)`` with ties to the lowest row."""
    v = np.asarray(F) @ np.asarray(mu, dtype=float) - np.asarray(h)
    i = int(np.argmax(v))
    return float(v[i]), i


@dataclass(frozen=True, eq=False)
class UncertaintySpec:
    tau: np.ndarray
    lam: np.ndarray
    lambda0: float = float("nan")


def uncertainty_from_estimate(est, lambda0: float = 0.7) -> UncertaintySpec:
    """Mean estimate plus ``lambda0 * sqrt(s)`` confidence widths."""
    return UncertaintySpec(np.asarray(est.tau_hat, dtype=float), lambda0 * np.sqrt(est.s_hat), lambda0)


def objective(spec: UncertaintySpec, F, h, mu) -> float:
    mu = np.asarray(mu, dtype=float)
    phi, _ = phi_of_mu(F, h, mu)
    return float(1.0 - spec.tau @ mu + phi + spec.lam @ np.abs(mu))


@dataclass(frozen=True)
class SolverConfig:
    K: int = 2000
    K_warm: int = 300
    warm_start: np.ndarray | None = field(default=None, compare=False)
    anchors: str = "train_instances"
    restarts: int = 1
    warm_guard: bool = False

    def __post_init__(self):
        if self.K < 1 or self.K_warm < 1:
            raise ConfigError("iteration counts must be at least 1")
        if self.restarts < 1:
            raise ConfigError("restarts must be at least 1")
        if self.anchors not in ("train_instances", "train_plus_eval"):
            raise ConfigError("anchors must be 'train_instances' or 'train_plus_eval'")


@dataclass(frozen=True, eq=False)
class MrcModel:
    mu: np.ndarray
    minimax_risk: float
    phi_mu: float
    n_labels: int
    lambda0: float = float("nan")
    iterations: int = 0
    constraints: Constraints | None = None

    @property
    def R(self) -> float:
        return self.minimax_risk


def _pad(constraints):
    R = max(c.n_rows for c in constraints)
    m = constraints[0].F.shape[1]
    F = np.zeros((len(constraints), R, m))
    h = np.full((len(constraints), R), np.inf)
    for b, c in enumerate(constraints):
        F[b, : c.n_rows] = c.F
        h[b, : c.n_rows] = c.h
    return F, h


def _asm(tau, lam, F, h, mu0, K):
    """Accelerated subgradient iterations on a batch; returns the best visited iterate."""
    B = tau.shape[0]
    rows = np.arange(B)
    mu = mu0.copy()
    bar_prev = mu0.copy()
    best_mu = mu0.copy()
    best_obj = np.full(B, np.inf)
    best_phi = np.zeros(B)
    for l in range(1, K + 2):
        v = np.einsum("brm,bm->br", F, mu) - h
        idx = np.argmax(v, axis=1)
        phi = v[rows, idx]
        obj = 1.0 - np.einsum("bm,bm->b", tau, mu) + phi + np.einsum("bm,bm->b", lam, np.abs(mu))
        if not np.all(np.isfinite(obj)):
            raise NumericalError(f"non-finite objective at iteration {l}")
        better = obj < best_obj
        if np.any(better):
            best_obj = np.where(better, obj, best_obj)
            best_phi = np.where(better, phi, best_phi)
            best_mu[better] = mu[better]
        if l == K + 1:
            break
        g = F[rows, idx] - tau + lam * np.sign(mu)
        bar = mu - g / (l + 1) ** 1.5
        mu = bar + ((l - 1) / (l + 2)) * (bar - bar_prev)
        bar_prev = bar
    return best_mu, best_obj, best_phi


def solve_batch(
    taus, lams, constraints, K: int, mu0=None, lambda0: float = float("nan"), restarts: int = 1,
    guard_K: int | None = None,
) -> list[MrcModel]:
    """Solve independent problems together.

    Each problem's iterates do not depend on the others, so the result for a
    problem is the same whichever batch it is solved in.  With ``restarts >
    1`` the step schedule starts over from the best iterate that many times,
    which helps when the objective has long flat valleys.  ``guard_K`` (with
    a warm start ``mu0``) also runs a cold solve of that length and keeps,
    per problem, whichever result has the lower objective.
    """
    taus = np.atleast_2d(np.asarray(taus, dtype=float))
    lams = np.atleast_2d(np.asarray(lams, dtype=float))
    B, m = taus.shape
    if len(constraints) != B or lams.shape != (B, m):
        raise InputError("batch dimensions disagree")
    if any(c.F.shape[1] != m for c in constraints):
        raise InputError("constraint rows and mean vectors have different lengths")
    if np.any(lams < 0):
        raise InputError("confidence widths must be nonnegative")
    mu0 = np.zeros((B, m)) if mu0 is None else np.array(np.broadcast_to(mu0, (B, m)), dtype=float)
    F, h = _pad(constraints)
    mu = mu0
    for _ in range(int(restarts)):
        mu, obj, phi = _asm(taus, lams, F, h, mu, int(K))
    its = int(K) * int(restarts)
    if guard_K is not None and mu0 is not None:
        cold = np.zeros((B, m))
        for _ in range(int(restarts)):
            cold, cobj, cphi = _asm(taus, lams, F, h, cold, int(guard_K))
        take = cobj < obj
        mu = np.where(take[:, None], cold, mu)
        obj = np.where(take, cobj, obj)
        phi = np.where(take, cphi, phi)
        its += int(guard_K) * int(restarts)
    return [
        MrcModel(mu[b].copy(), float(obj[b]), float(phi[b]), constraints[b].n_labels, lambda0, its, constraints[b])
        for b in range(B)
    ]


def solve(spec: UncertaintySpec, constraints: Constraints, cfg: SolverConfig = SolverConfig()) -> MrcModel:
    """Minimize the dual objective; warm starts use ``cfg.K_warm`` iterations.

    With ``cfg.warm_guard`` a warm-started solve is never worse than the cold one.
    """
    warm = cfg.warm_start is not None
    K = cfg.K_warm if warm else cfg.K
    guard = cfg.K if warm and cfg.warm_guard else None
    return solve_batch(
        spec.tau[None], spec.lam[None], [constraints], K, cfg.warm_start, spec.lambda0, cfg.restarts, guard
    )[0]


def classify_prob(model: MrcModel, x, fmap: FeatureMap) -> np.ndarray:
    """Probabilistic rule; rows sum to one.  Uniform where all positive parts vanish."""
    s = fmap.scores(x, model.mu)
    pos = np.maximum(s - model.phi_mu, 0.0)
    c = pos.sum(axis=-1, keepdims=True)
    uniform = np.full_like(pos, 1.0 / fmap.n_labels)
    with np.errstate(invalid="ignore", divide="ignore"):
        return np.where(c > C_TOL, pos / np.where(c > C_TOL, c, 1.0), uniform)


def classify_det(model: MrcModel, x, fmap: FeatureMap):
    """Label with the largest score, ties to the smallest label."""
    out = np.argmax(fmap.scores(x, model.mu), axis=-1)
    return int(out) if np.ndim(out) == 0 else out


def expected_error(model: MrcModel, X, y, fmap: FeatureMap) -> tuple[float, float]:
    """Mean 0-1 loss on ``(X, y)`` of the probabilistic and deterministic rules."""
    y = np.asarray(y)
    P = classify_prob(model, X, fmap)
    prob = float(np.mean(1.0 - P[np.arange(len(y)), y]))
    det = float(np.mean(classify_det(model, X, fmap) != y))
    return prob, det


class ErrorBound(NamedTuple):
    upper: float
    correction: float | None

    @property
    def certified(self) -> float:
        return self.upper + (self.correction or 0.0)


def error_bound(model: MrcModel, spec: UncertaintySpec, tau_inf=None) -> ErrorBound:
    """Minimax risk, plus the correction for the true mean falling outside the widths."""
    if tau_inf is None:
        return ErrorBound(model.minimax_risk, None)
    gap = np.maximum(np.abs(np.asarray(tau_inf) - spec.tau) - spec.lam, 0.0)
    return ErrorBound(model.minimax_risk, float(gap @ np.abs(model.mu)))


def dump_model(model: MrcModel, fmap: FeatureMap | None = None) -> str:
    doc = {
        "format": "evomrc-model",
        "version": MODEL_VERSION,
        "n_labels": model.n_labels,
        "lambda0": model.lambda0,
        "minimax_risk": model.minimax_risk,
        "phi_mu": model.phi_mu,
        "iterations": model.iterations,
        "mu": model.mu.tolist(),
        "feature_map": None if fmap is None else fmap.describe(),
    }
    return json.dumps(doc)


def load_model(text: str) -> tuple[MrcModel, FeatureMap | None]:
    doc = json.loads(text)
    if doc.get("format") != "evomrc-model":
        raise InputError("not a model file")
    if doc.get("version") != MODEL_VERSION:
        raise InputError(f"unsupported model version {doc.get('version')}")
    model = MrcModel(
        np.array(doc["mu"], dtype=float),
        float(doc["minimax_risk"]),
        float(doc["phi_mu"]),
        int(doc["n_labels"]),
        float(doc["lambda0"]),
        int(doc["iterations"]),
    )
    fm = doc.get("feature_map")
    return model, (None if fm is None else FeatureMap.from_description(fm))
