"""Scenario drivers: domain adaptation, multi-task, concept drift and continual learning.

Every driver accepts one :class:`TaskSequence` or a list of sequences with the
same number of tasks.  Lists are processed in lockstep: the recursions
broadcast over sequences and the solver handles all of them in one batch.
The result for a sequence does not depend on which other sequences share its
batch.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field, replace

import numpy as np

from . import mrc
from .datagen import TaskSequence
from .errors import ConfigError, InputError
from .features import FeatureMap
from .task_stats import D_INIT, VAR_FLOOR, change_estimates, merge_moments, moments, stack_moments
from .tracker import (
    TrackedEstimate,
    adapt_dbar,
    forward_step,
    initial_estimate,
    kin_forward_step,
    kin_initial_state,
    kin_predict_step,
    kin_smooth_sequence,
    noise_vector,
    predict_step,
    single_task_estimate,
    smooth_sequence,
    transition_matrix,
)

__all__ = [
    "ScenarioConfig",
    "TaskRecord",
    "ScenarioResult",
    "run_single",
    "run_mda",
    "run_mtl",
    "run_scd",
    "run_cl",
    "revisit_task",
]

SCENARIOS = ("mda", "mtl", "scd", "cl")


@dataclass(frozen=True)
class ScenarioConfig:
    """Settings shared by the drivers.

    ``d_mode`` selects the change-estimate window: ``centered`` looks at the
    closest tasks on both sides, ``trailing`` only at preceding ones.
    ``auto`` means centered for the batch scenarios (MDA, MTL) and trailing for
    the streaming ones (SCD, CL).  ``order > 0`` switches to the kinematic
    tracker with an adaptively estimated noise level.  ``warm_guard`` pairs
    every warm-started solve with a cold one and keeps the better result, so
    warm starts never lose to cold starts at the price of extra iterations.
    """

    lambda0: float = 0.7
    W: int = 2
    b: int = 3
    order: int = 0
    K: int = 2000
    K_warm: int = 300
    restarts: int = 1
    anchors: str = "train_instances"
    d_mode: str = "auto"
    d_init: float = D_INIT
    var_floor: float = VAR_FLOOR
    beta: float = 0.3
    warm_guard: bool = True

    def __post_init__(self):
        if self.lambda0 <= 0:
            raise ConfigError("lambda0 must be positive")
        if self.W < 1:
            raise ConfigError("W must be at least 1")
        if self.b < 0:
            raise ConfigError("b must be nonnegative")
        if self.order < 0:
            raise ConfigError("order must be nonnegative")
        if self.K < 1 or self.K_warm < 1 or self.restarts < 1:
            raise ConfigError("K, K_warm and restarts must be at least 1")
        if self.anchors not in ("train_instances", "train_plus_eval"):
            raise ConfigError("anchors must be 'train_instances' or 'train_plus_eval'")
        if self.d_mode not in ("auto", "centered", "trailing"):
            raise ConfigError("d_mode must be 'auto', 'centered' or 'trailing'")
        if not 0 <= self.beta <= 1:
            raise ConfigError("beta must lie in [0, 1]")

    def mode_for(self, scenario: str) -> str:
        if self.d_mode != "auto":
            return self.d_mode
        return "centered" if scenario in ("mda", "mtl") else "trailing"


@dataclass(eq=False)
class TaskRecord:
    """One solved classifier: task ``j`` learned with samples up to task ``k``."""

    j: int
    k: int
    horizon: str
    n_j: int
    model: mrc.MrcModel
    tau: np.ndarray
    lam: np.ndarray
    s_hat: np.ndarray
    ess: float
    error_prob: float = float("nan")
    error_det: float = float("nan")


@dataclass(eq=False)
class ScenarioResult:
    scenario: str
    records: list
    runtime: float = 0.0
    state: object = field(default=None, repr=False)

    def final(self) -> dict:
        """Latest record of every task."""
        out = {}
        for r in self.records:
            out[r.j] = r
        return out

    def models(self) -> dict:
        return {j: r.model for j, r in self.final().items()}

    def mean_error(self, kind: str = "prob") -> float:
        vals = [getattr(r, f"error_{kind}") for r in self.final().values()]
        vals = [v for v in vals if np.isfinite(v)]
        return float(np.mean(vals)) if vals else float("nan")


# batch bookkeeping -----------------------------------------------------------


class _Batch:
    def __init__(self, seqs, fmap: FeatureMap, cfg: ScenarioConfig, allow_empty_last=False):
        if not seqs:
            raise InputError("no task sequences given")
        ks = {s.k for s in seqs}
        if len(ks) != 1:
            raise InputError("sequences processed together must have the same number of tasks")
        if any(s.n_labels > fmap.n_labels for s in seqs):
            raise InputError("sequence has more labels than the feature map")
        self.seqs, self.fmap, self.cfg = seqs, fmap, cfg
        self.B, self.k = len(seqs), seqs[0].k
        self.deltas = seqs[0].deltas()
        self.moms = []
        for j in range(self.k):
            sizes = {s.tasks[j].n for s in seqs}
            if 0 in sizes:
                if sizes != {0} or not (allow_empty_last and j == self.k - 1):
                    raise InputError(f"task {j + 1} has no training samples")
                self.moms.append(None)
                continue
            self.moms.append(
                stack_moments(moments(s.tasks[j].X, s.tasks[j].y, fmap, j + 1, cfg.var_floor) for s in seqs)
            )

    def taus(self, upto=None):
        return [m.tau for m in self.moms[: (self.k if upto is None else upto)]]

    def anchors(self, b: int, j: int, extra_test_of: int | None = None):
        """Anchor instances: training set of task ``j`` plus evaluation instances if configured."""
        seq = self.seqs[b]
        parts = [seq.tasks[j - 1].X]
        eval_task = j if extra_test_of is None else extra_test_of
        if self.cfg.anchors == "train_plus_eval":
            Xt = seq.tasks[eval_task - 1].X_test
            if Xt is not None and len(Xt):
                parts.append(Xt)
        X = np.concatenate([p for p in parts if len(p)])
        return mrc.build_constraints(X, self.fmap)

    def n_of(self, j):
        return np.array([s.tasks[j - 1].n for s in self.seqs])

    def sig_norm(self, j):
        return np.max(np.abs(self.moms[j - 1].sigma2), axis=-1)


def _as_list(seqs):
    if isinstance(seqs, TaskSequence):
        return [seqs], True
    return list(seqs), False


def _changes(batch: _Batch, mode: str, upto=None):
    taus = batch.taus(upto)
    return change_estimates(taus, batch.cfg.W, mode, batch.cfg.d_init)


def _dbar_init(batch):
    return np.full((batch.B, batch.fmap.m), batch.cfg.d_init)


def _forward_extend(batch, forwards, dbars, changes, upto):
    """Extend forward states (and kinematic noise levels) to tasks ``1..upto``."""
    cfg = batch.cfg
    p = cfg.order
    forwards, dbars = list(forwards), list(dbars)
    for j in range(len(forwards) + 1, upto + 1):
        mom = batch.moms[j - 1]
        if p == 0:
            if j == 1:
                forwards.append(initial_estimate(mom))
            else:
                forwards.append(forward_step(forwards[-1], mom, changes[j - 1]))
            dbars.append(None)
            continue
        if j == 1:
            forwards.append(kin_initial_state(mom, p))
            dbars.append(_dbar_init(batch))
            continue
        prev = forwards[-1]
        delta = batch.deltas[j - 1]
        T = transition_matrix(p, delta)
        g0 = noise_vector(p, delta)[0]
        innov = mom.tau - (prev.gamma @ T.T)[..., 0]
        pred_var = (T @ prev.Sigma @ T.T)[..., 0, 0] + mom.s
        dbar = adapt_dbar(dbars[-1], innov / abs(g0), pred_var / g0**2, cfg.beta)
        forwards.append(kin_forward_step(prev, mom, dbar, delta))
        dbars.append(dbar)
    return forwards, dbars


def _est(state):
    return state if isinstance(state, TrackedEstimate) else state.as_estimate()


def _smooth(batch, forwards, dbars, changes, b):
    if batch.cfg.order == 0:
        return smooth_sequence(forwards, changes, b)
    return [s.as_estimate() for s in kin_smooth_sequence(forwards, dbars, batch.deltas[: len(forwards)], b)]


def _predict(batch, fwd, dbar, change, j):
    if batch.cfg.order == 0:
        return predict_step(fwd, change)
    return kin_predict_step(fwd, dbar, batch.deltas[j - 1]).as_estimate()


def _d_norms(batch, changes, dbars, upto):
    """Per-task, per-sequence sup norm of the change level (row ``i`` is task ``i + 1``)."""
    out = np.zeros((upto, batch.B))
    for j in range(2, upto + 1):
        if batch.cfg.order == 0:
            d = np.broadcast_to(changes[j - 1].d, (batch.B, batch.fmap.m))
        else:
            g0 = noise_vector(batch.cfg.order, batch.deltas[j - 1])[0]
            d = g0**2 * dbars[j - 1]
        out[j - 1] = np.max(np.abs(d), axis=-1)
    return out


def _predicted_ess(batch, fwd_ess, change, dbar, j):
    """ESS of predicting task ``j`` from the forward state of task ``j - 1`` (no samples of ``j``)."""
    if batch.cfg.order == 0:
        d = np.broadcast_to(change.d, (batch.B, batch.fmap.m))
    else:
        d = noise_vector(batch.cfg.order, batch.deltas[j - 1])[0] ** 2 * dbar
    dk = np.max(np.abs(d), axis=-1)
    sig = batch.sig_norm(j - 1)
    return fwd_ess * sig / (sig + dk * fwd_ess)


def _ess_tables(batch, dn, upto):
    """Forward ESS and combined ESS over tasks ``1..upto`` (arrays ``(upto, B)``)."""
    n = np.array([batch.n_of(j) for j in range(1, upto + 1)], dtype=float)
    sig = np.array([batch.sig_norm(j) for j in range(1, upto + 1)])
    fwd = np.empty_like(n)
    fwd[0] = n[0]
    for i in range(1, upto):
        fwd[i] = n[i] + fwd[i - 1] * sig[i] / (sig[i] + dn[i] * fwd[i - 1])
    aux = np.empty_like(n)
    aux[-1] = n[-1]
    for i in range(upto - 2, -1, -1):
        aux[i] = n[i] + aux[i + 1] * sig[i] / (sig[i] + aux[i + 1] * dn[i + 1])
    comb = fwd.copy()
    comb[:-1] += aux[1:] * sig[:-1] / (sig[:-1] + aux[1:] * dn[1:])
    return fwd, comb


def _solve(batch, est, cons, warm=None):
    cfg = batch.cfg
    lam = cfg.lambda0 * np.sqrt(est.s_hat)
    K = cfg.K if warm is None else cfg.K_warm
    guard = cfg.K if cfg.warm_guard else None
    return mrc.solve_batch(est.tau_hat, lam, cons, K, warm, cfg.lambda0, cfg.restarts, guard), lam


def _records(batch, models, est, lam, j, k, horizon, ess, score_task=None, score_train=False):
    out = []
    for b in range(batch.B):
        seq = batch.seqs[b]
        t = seq.tasks[(j if score_task is None else score_task) - 1]
        rec = TaskRecord(j, k, horizon, int(seq.tasks[j - 1].n), models[b], est.tau_hat[b], lam[b], est.s_hat[b], float(ess[b]))
        X, y = (t.X, t.y) if score_train else (t.X_test, t.y_test)
        if X is not None and len(X):
            rec.error_prob, rec.error_det = mrc.expected_error(models[b], X, y, batch.fmap)
        out.append(rec)
    return out


def _finish(name, per_seq, t0, single, states=None):
    dt = time.perf_counter() - t0
    res = [
        ScenarioResult(name, recs, dt, None if states is None else states[b]) for b, recs in enumerate(per_seq)
    ]
    return res[0] if single else res


def _mu_stack(models):
    return np.stack([m.mu for m in models])


# drivers ----------------------------------------------------------------------


def run_single(seqs, fmap: FeatureMap, cfg: ScenarioConfig = ScenarioConfig(), chunk: int = 2000):
    """Each task learned from its own samples only (cold starts)."""
    seqs, single = _as_list(seqs)
    t0 = time.perf_counter()
    batch = _Batch(seqs, fmap, cfg)
    jobs = [(j, b) for j in range(1, batch.k + 1) for b in range(batch.B)]
    per_seq = [[] for _ in range(batch.B)]
    for start in range(0, len(jobs), chunk):
        part = jobs[start : start + chunk]
        ests = [single_task_estimate(batch.moms[j - 1]) for j, _ in part]
        tau = np.stack([e.tau_hat[b] for e, (_, b) in zip(ests, part)])
        s = np.stack([e.s_hat[b] for e, (_, b) in zip(ests, part)])
        cons = [batch.anchors(b, j) for j, b in part]
        lam = cfg.lambda0 * np.sqrt(s)
        models = mrc.solve_batch(tau, lam, cons, cfg.K, None, cfg.lambda0, cfg.restarts)
        for (j, b), mdl, t, l, sh in zip(part, models, tau, lam, s):
            task = seqs[b].tasks[j - 1]
            rec = TaskRecord(j, j, "single", task.n, mdl, t, l, sh, float(task.n))
            if task.X_test is not None and len(task.X_test):
                rec.error_prob, rec.error_det = mrc.expected_error(mdl, task.X_test, task.y_test, fmap)
            per_seq[b].append(rec)
    for recs in per_seq:
        recs.sort(key=lambda r: r.j)
    return _finish("single", per_seq, t0, single)


def run_mda(seqs, fmap: FeatureMap, cfg: ScenarioConfig = ScenarioConfig()):
    """Learn the last task using all preceding ones; predicts when it has no samples."""
    seqs, single = _as_list(seqs)
    t0 = time.perf_counter()
    batch = _Batch(seqs, fmap, cfg, allow_empty_last=True)
    k = batch.k
    empty = batch.moms[-1] is None
    last = k - 1 if empty else k
    if last == 0:
        raise InputError("domain adaptation needs at least one task with samples")
    changes = _changes(batch, cfg.mode_for("mda"), last)
    forwards, dbars = _forward_extend(batch, [], [], changes, last)
    dn = _d_norms(batch, changes, dbars, last)
    fwd_ess, _ = _ess_tables(batch, dn, last)
    if empty:
        d_pred = replace(changes[-1], task_index=k)
        est = _predict(batch, forwards[-1], dbars[-1], d_pred, k)
        ess = _predicted_ess(batch, fwd_ess[-1], d_pred, dbars[-1], k)
        cons = [batch.anchors(b, last, extra_test_of=k) for b in range(batch.B)]
        horizon = "predicted"
    else:
        est = _est(forwards[-1])
        ess = fwd_ess[-1]
        cons = [batch.anchors(b, k) for b in range(batch.B)]
        horizon = "forward"
    models, lam = _solve(batch, est, cons)
    recs = _records(batch, models, est, lam, k, last, horizon, ess)
    return _finish("mda", [[r] for r in recs], t0, single)


def run_mtl(seqs, fmap: FeatureMap, cfg: ScenarioConfig = ScenarioConfig()):
    """Learn every task using all tasks; solves chain backward with warm starts."""
    seqs, single = _as_list(seqs)
    t0 = time.perf_counter()
    batch = _Batch(seqs, fmap, cfg)
    k = batch.k
    changes = _changes(batch, cfg.mode_for("mtl"))
    forwards, dbars = _forward_extend(batch, [], [], changes, k)
    smoothed = _smooth(batch, forwards, dbars, changes, None)
    dn = _d_norms(batch, changes, dbars, k)
    _, comb = _ess_tables(batch, dn, k)
    per_seq = [[] for _ in range(batch.B)]
    warm = None
    for j in range(k, 0, -1):
        est = smoothed[j - 1]
        cons = [batch.anchors(b, j) for b in range(batch.B)]
        models, lam = _solve(batch, est, cons, warm)
        warm = _mu_stack(models)
        for b, rec in enumerate(_records(batch, models, est, lam, j, k, "smoothed", comb[j - 1])):
            per_seq[b].append(rec)
    for recs in per_seq:
        recs.reverse()
    return _finish("mtl", per_seq, t0, single)


def run_scd(seqs, fmap: FeatureMap, cfg: ScenarioConfig = ScenarioConfig()):
    """Predict each task before its samples arrive; scored on that task (prequential)."""
    seqs, single = _as_list(seqs)
    t0 = time.perf_counter()
    batch = _Batch(seqs, fmap, cfg, allow_empty_last=True)
    k = batch.k
    mode = cfg.mode_for("scd")
    per_seq = [[] for _ in range(batch.B)]
    zero = mrc.MrcModel(np.zeros(fmap.m), 1.0 - 1.0 / fmap.n_labels, -1.0 / fmap.n_labels, fmap.n_labels, cfg.lambda0)
    nan = np.full((batch.B, fmap.m), np.nan)
    est0 = TrackedEstimate(1, "predicted", nan, nan, 0)
    recs = _records(batch, [zero] * batch.B, est0, nan, 1, 0, "predicted", np.zeros(batch.B),
                    score_train=_no_test(batch, 1))
    for b, r in enumerate(recs):
        per_seq[b].append(r)
    forwards, dbars = [], []
    warm = None
    for step in range(2, k + 1):
        changes = _changes(batch, mode, step - 1)
        forwards, dbars = _forward_extend(batch, forwards, dbars, changes, step - 1)
        d_pred = replace(changes[-1], task_index=step)
        est = _predict(batch, forwards[-1], dbars[-1], d_pred, step)
        dn = _d_norms(batch, changes, dbars, step - 1)
        fwd_ess, _ = _ess_tables(batch, dn, step - 1)
        ess = _predicted_ess(batch, fwd_ess[-1], d_pred, dbars[-1], step)
        cons = [batch.anchors(b, step - 1, extra_test_of=step) for b in range(batch.B)]
        models, lam = _solve(batch, est, cons, warm)
        warm = _mu_stack(models)
        recs = _records(batch, models, est, lam, step, step - 1, "predicted", ess, score_train=_no_test(batch, step))
        for b, r in enumerate(recs):
            per_seq[b].append(r)
    return _finish("scd", per_seq, t0, single)


def _no_test(batch, j):
    return any(s.tasks[j - 1].X_test is None or len(s.tasks[j - 1].X_test) == 0 for s in batch.seqs)


@dataclass(eq=False)
class ClState:
    """What continual learning keeps between steps (one state per batch)."""

    batch: _Batch
    forwards: list
    dbars: list
    changes: list
    mus: dict


def _cl_step(batch, state, k, b_steps, mode, per_seq):
    cfg = batch.cfg
    changes = _changes(batch, mode, k)
    if mode == "centered" and state.forwards:
        # centered windows move as tasks arrive; recompute the forward pass
        forwards, dbars = _forward_extend(batch, [], [], changes, k)
    else:
        forwards, dbars = _forward_extend(batch, state.forwards, state.dbars, changes, k)
    state.forwards, state.dbars, state.changes = forwards, dbars, changes
    bb = min(b_steps, k - 1)
    smoothed = _smooth(batch, forwards, dbars, changes, bb)
    dn = _d_norms(batch, changes, dbars, k)
    fwd_ess, comb = _ess_tables(batch, dn, k)
    warm = None
    for j in range(k, k - bb - 1, -1):
        est = smoothed[j - (k - bb)]
        cons = [batch.anchors(b, j) for b in range(batch.B)]
        models, lam = _solve(batch, est, cons, warm)
        warm = _mu_stack(models)
        state.mus[j] = warm
        horizon = "forward" if j == k and bb == 0 else "smoothed"
        ess = fwd_ess[j - 1] if bb == 0 else comb[j - 1]
        for b, rec in enumerate(_records(batch, models, est, lam, j, k, horizon, ess)):
            per_seq[b].append(rec)


def run_cl(seqs, fmap: FeatureMap, cfg: ScenarioConfig = ScenarioConfig()):
    """Continual learning: at each step learn the new task and refine the last ``b`` ones."""
    seqs, single = _as_list(seqs)
    t0 = time.perf_counter()
    batch = _Batch(seqs, fmap, cfg)
    mode = cfg.mode_for("cl")
    state = ClState(batch, [], [], [], {})
    per_seq = [[] for _ in range(batch.B)]
    for k in range(1, batch.k + 1):
        _cl_step(batch, state, k, cfg.b, mode, per_seq)
    return _finish("cl", per_seq, t0, single, [state] * batch.B if single else None)


def revisit_task(result: ScenarioResult, t: int, X_new, y_new, fmap: FeatureMap,
                 cfg: ScenarioConfig = ScenarioConfig()):
    """Add samples to an already learned task ``t`` and update all models.

    The moments of task ``t`` are pooled exactly, forward states are
    recomputed from the first task whose inputs changed, and every task is
    smoothed and re-solved, as multi-task learning would on the pooled data.
    """
    state = result.state
    if not isinstance(state, ClState) or state.batch.B != 1:
        raise InputError("revisits need the state of a single-sequence continual-learning run")
    batch = state.batch
    k = batch.k
    if not 1 <= t <= k:
        raise InputError(f"revisited task {t} outside 1..{k}")
    X_new = np.asarray(X_new, dtype=float).reshape(-1, batch.seqs[0].input_dim)
    y_new = np.asarray(y_new)
    if X_new.shape[0] == 0:
        return result
    t0 = time.perf_counter()
    seq = batch.seqs[0]
    old = seq.tasks[t - 1]
    task = replace(old, X=np.concatenate([old.X, X_new]), y=np.concatenate([old.y, y_new]))
    new_seq = seq.replace_task(t - 1, task)

    nb = object.__new__(_Batch)
    nb.__dict__.update(batch.__dict__)
    nb.seqs = [new_seq]
    nb.moms = list(batch.moms)
    pooled = merge_moments(_unstack(batch.moms[t - 1]), fmap.phi(X_new, y_new), cfg.var_floor)
    nb.moms[t - 1] = stack_moments([pooled])

    mode = cfg.mode_for("cl")
    changes = _changes(nb, mode, k)
    first = t
    for j in range(1, t):
        if not np.array_equal(changes[j - 1].d, state.changes[j - 1].d):
            first = j
            break
    forwards, dbars = _forward_extend(nb, state.forwards[: first - 1], state.dbars[: first - 1], changes, k)
    smoothed = _smooth(nb, forwards, dbars, changes, None)
    dn = _d_norms(nb, changes, dbars, k)
    _, comb = _ess_tables(nb, dn, k)
    recs, warm, mus = [], None, {}
    for j in range(k, 0, -1):
        est = smoothed[j - 1]
        models, lam = _solve(nb, est, [nb.anchors(0, j)], warm)
        warm = _mu_stack(models)
        mus[j] = warm
        recs.extend(_records(nb, models, est, lam, j, k, "smoothed", comb[j - 1]))
    recs.reverse()
    new_state = ClState(nb, forwards, dbars, changes, mus)
    return ScenarioResult("cl", result.records + recs, time.perf_counter() - t0, new_state)


def _unstack(m):
    from .task_stats import TaskMoments

    return TaskMoments(m.task_index, np.asarray(m.n[0]), m.tau[0], m.sigma2[0], None if m.m2 is None else m.m2[0])
