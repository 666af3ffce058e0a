"""Effective sample sizes of forward and forward-backward estimation.

Recursions are evaluated with equality.  Closed-form lower bounds use
``alpha`` defined by ``n d = alpha^2 / (1 + alpha)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import InputError

__all__ = [
    "EssInputs",
    "EssReport",
    "ess_forward",
    "ess_backward_aux",
    "ess_combined",
    "alpha_of",
    "forward_gain",
    "ess_lower_bounds",
    "regime",
    "ess_window",
    "ess_report",
    "bound_scale",
]


def _inf_norms(values, k):
    if values is None:
        return np.ones(k)
    out = np.array([float(np.max(np.abs(v))) if np.ndim(v) else float(v) for v in values])
    if out.shape != (k,):
        raise InputError("per-task lists must be aligned")
    return out


def _d_norms(d_list, k):
    out = np.zeros(k)
    for i, v in enumerate(d_list):
        if v is None:
            continue
        v = getattr(v, "d", v)
        out[i] = float(np.max(np.abs(v))) if np.ndim(v) else float(v)
    if len(d_list) != k:
        raise InputError("per-task lists must be aligned")
    return out


def ess_forward(n_list, sigma2_list=None, d_list=None) -> np.ndarray:
    """Forward ESS ``n_j^j`` for every task; ``d_list[0]`` is ignored."""
    n = np.asarray(n_list, dtype=float)
    k = n.size
    if k == 0 or np.any(n <= 0):
        raise InputError("sample sizes must be positive")
    sig = _inf_norms(sigma2_list, k)
    d = np.zeros(k) if d_list is None else _d_norms(d_list, k)
    out = np.empty(k)
    out[0] = n[0]
    for j in range(1, k):
        out[j] = n[j] + out[j - 1] * sig[j] / (sig[j] + d[j] * out[j - 1])
    return out


def ess_backward_aux(n_list, sigma2_list=None, d_list=None) -> np.ndarray:
    """Auxiliary backward sizes ``n_j^{-k}`` (samples of tasks ``j..k`` seen from ``j``)."""
    n = np.asarray(n_list, dtype=float)
    k = n.size
    sig = _inf_norms(sigma2_list, k)
    d = np.zeros(k) if d_list is None else _d_norms(d_list, k)
    out = np.empty(k)
    out[-1] = n[-1]
    for j in range(k - 2, -1, -1):
        out[j] = n[j] + out[j + 1] * sig[j] / (sig[j] + out[j + 1] * d[j + 1])
    return out


def ess_combined(n_list, sigma2_list=None, d_list=None, j: int | None = None):
    """``(n_j^{-k}, n_j^k)`` for task ``j`` (1-based), or arrays over all tasks when ``j`` is None."""
    n = np.asarray(n_list, dtype=float)
    k = n.size
    sig = _inf_norms(sigma2_list, k)
    d = np.zeros(k) if d_list is None else _d_norms(d_list, k)
    fwd = ess_forward(n, sig, d)
    aux = ess_backward_aux(n, sig, d)
    comb = fwd.copy()
    comb[:-1] += aux[1:] * sig[:-1] / (sig[:-1] + aux[1:] * d[1:])
    if j is None:
        return aux, comb
    if not 1 <= j <= k:
        raise InputError(f"task index {j} outside 1..{k}")
    return float(aux[j - 1]), float(comb[j - 1])


def alpha_of(nd: float) -> float:
    """Positive root of ``alpha^2 = nd (1 + alpha)``."""
    if nd < 0:
        raise InputError("nd must be nonnegative")
    return 0.5 * (nd + math.sqrt(nd * nd + 4.0 * nd))


def forward_gain(nd: float, j: int) -> float:
    """``A_j``: closed-form forward ESS is ``n (1 + A_j)``.

    ``A_j = (1+a)/a * ((1+a)^(2j-2) - 1) / ((1+a)^(2j-1) + 1)``, with the
    ``nd = 0`` limit ``j - 1``.
    """
    if j < 1:
        raise InputError("task index must be at least 1")
    if j == 1:
        return 0.0
    a = alpha_of(nd)
    if a == 0.0:
        return float(j - 1)
    L = math.log1p(a)
    e = (2 * j - 1) * L
    if e > 700.0:
        ratio = -math.expm1(-(2 * j - 2) * L) * math.exp(-L) / (1.0 + math.exp(-e))
    else:
        ratio = math.expm1((2 * j - 2) * L) / (math.exp(e) + 1.0)
    return (1.0 + a) / a * ratio


def regime(nd: float, j: int) -> str:
    if nd < 1.0 / j**2:
        return "nd_small"
    if nd < 1.0:
        return "nd_mid"
    return "nd_large"


@dataclass(frozen=True)
class EssInputs:
    n: float
    d: float
    j: int
    k: int | None = None
    sigma2: float = 1.0

    def __post_init__(self):
        k = self.j if self.k is None else self.k
        if self.n < 1 or self.d < 0 or not 1 <= self.j <= k:
            raise InputError("need n >= 1, d >= 0 and 1 <= j <= k")


@dataclass(frozen=True)
class EssBounds:
    forward: float
    combined: float
    regime_forward: str
    forward_case: float
    combined_case: float


def ess_lower_bounds(inp: EssInputs) -> EssBounds:
    """Closed forms and regime cases for uniform ``n``, ``d`` and unit variance scale.

    ``d`` is measured relative to the variance scale (``d / sigma2``).
    """
    n, j = float(inp.n), inp.j
    k = j if inp.k is None else inp.k
    nd = n * inp.d / inp.sigma2
    fwd = n * (1.0 + forward_gain(nd, j))
    comb = n * (1.0 + forward_gain(nd, j) + forward_gain(nd, k - j + 1))
    reg = regime(nd, j)
    if j == 1:
        f_case = n
    elif reg == "nd_small":
        f_case = n * (1.0 + (j - 1) / 3.0)
    elif reg == "nd_mid":
        f_case = n * (1.0 + 1.0 / (5.0 * math.sqrt(nd)))
    else:
        f_case = n * (1.0 + 1.0 / (3.0 * nd))
    if j == 1 or j == k:
        c_case = f_case
    elif reg == "nd_small":
        c_case = n * (1.0 + (j - 1) / 3.0 + j * (k - j) / (j + 2.0 * (k - j)))
    elif reg == "nd_mid":
        c_case = n * (1.0 + 2.0 / (5.0 * math.sqrt(nd)))
    else:
        c_case = n * (1.0 + 2.0 / (3.0 * nd))
    return EssBounds(fwd, comb, reg, f_case, c_case)


def ess_window(n: float, d: float, W: int, W_hat: int | None = None) -> float:
    """ESS of averaging the ``W`` preceding tasks, or a window with ``W_hat`` tasks up to ``j``."""
    if W < 1:
        raise InputError("window must be at least 1")
    nd = n * d
    if W_hat is None:
        return n * 6.0 * W / ((W + 1) * (2 * W + 1) * nd + 6.0)
    if not 1 <= W_hat <= W:
        raise InputError("W_hat must lie in 1..W")
    c = 6.0 * W_hat**2 + 2.0 * W**2 + 3.0 * W + 1.0 - 6.0 * W_hat * W - 6.0 * W_hat
    return n * 6.0 * W / (c * nd + 6.0)


@dataclass(frozen=True)
class EssReport:
    n: float
    d: float
    j: int
    k: int
    forward: float
    backward_aux: float
    combined: float
    lower_bound_forward: float
    lower_bound_combined: float
    regime: str
    regime_bound_forward: float
    regime_bound_combined: float
    windows: dict


def ess_report(n: float, d: float, j: int, k: int, windows=(5, 25, 45)) -> EssReport:
    """Uniform-sequence report used by the ESS grid command."""
    inp = EssInputs(n, d, j, k)
    ns = np.full(k, float(n))
    ds = np.full(k, float(d))
    aux, comb = ess_combined(ns, None, ds, j)
    fwd = ess_forward(ns, None, ds)[j - 1]
    lb = ess_lower_bounds(inp)
    win = {}
    for W in windows:
        win[f"window_fwd_{W}"] = ess_window(n, d, W)
        win[f"window_ctr_{W}"] = ess_window(n, d, W, (W + 1) // 2)
    return EssReport(n, d, j, k, float(fwd), aux, comb, lb.forward, lb.combined, lb.regime_forward,
                     lb.forward_case, lb.combined_case, win)


def bound_scale(ess: float, M: float, m: int, lambda0: float = 0.7, kappa: float = 1.0, delta: float = 0.05) -> float:
    """Factor multiplying ``||mu||_1`` in the high-probability error bound at a given ESS."""
    if ess <= 0:
        raise InputError("ESS must be positive")
    return M * (kappa * math.sqrt(2.0 * math.log(2.0 * m / delta)) + lambda0) / math.sqrt(ess)
