"""Figures written next to the delimited reports."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

STYLE = {
    "figure.figsize": (6.4, 4.0),
    "axes.grid": True,
    "grid.alpha": 0.3,
    "font.size": 10,
    "savefig.dpi": 120,
}


def _save(fig, path):
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)
    return path


def plot_results(rows, path, title=None):
    """Mean error and minimax risk per task (final record of each task, averaged over reps)."""
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        js = sorted({r["j"] for r in rows})
        for key, label, style in (("error_prob", "error (probabilistic rule)", "-"),
                                  ("error_det", "error (deterministic rule)", ":"),
                                  ("R", "minimax risk", "--"),
                                  ("bound", "certified bound", "-.")):
            vals = []
            for j in js:
                v = [r[key] for r in rows if r["j"] == j and np.isfinite(r[key])]
                vals.append(np.mean(v) if v else np.nan)
            if np.any(np.isfinite(vals)):
                ax.plot(js, vals, style, label=label)
        ax.set_xlabel("task")
        ax.set_ylabel("probability")
        if title:
            ax.set_title(title)
        ax.legend()
        return _save(fig, path)


def plot_ess(rows, path):
    """Forward and combined ESS over nd, one curve per sample size."""
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        for n in sorted({r["n"] for r in rows}):
            sub = sorted((r for r in rows if r["n"] == n), key=lambda r: r["nd"])
            nd = [r["nd"] for r in sub]
            ax.loglog(nd, [r["ess_forward"] / n for r in sub], "-", label=f"forward, n={n:g}")
            ax.loglog(nd, [r["ess_combined"] / n for r in sub], "--", label=f"forward-backward, n={n:g}")
            ax.loglog(nd, [r["bound_forward"] / n for r in sub], ":", color="gray")
        ax.set_xlabel("n d")
        ax.set_ylabel("ESS / n")
        ax.legend(fontsize=8)
        return _save(fig, path)


def plot_pacf(rows, path, T=None):
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        lags = [r["lag"] for r in rows]
        ax.bar(lags, [r["mean"] for r in rows], yerr=[r["std"] for r in rows], color="C0", alpha=0.7)
        if T:
            band = 2.0 / np.sqrt(T)
            ax.axhline(band, ls="--", color="gray")
            ax.axhline(-band, ls="--", color="gray")
        ax.set_xlabel("lag")
        ax.set_ylabel("partial autocorrelation")
        return _save(fig, path)
