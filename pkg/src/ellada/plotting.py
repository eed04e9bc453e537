"""Static figures for solver logs and closed-loop runs (matplotlib, Agg)."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

_DETERMINISTIC = {"svg.hashsalt": "ellada", "svg.fonttype": "none"}


def _save(fig, path: Path):
    meta = {"Date": None} if path.suffix == ".svg" else {}
    with matplotlib.rc_context(_DETERMINISTIC):
        fig.savefig(path, metadata=meta or None)
    plt.close(fig)
    return path


def plot_solve(log, path):
    """Barrier augmented Lagrangian and inner residuals along the run."""
    path = Path(path)
    recs = log.inner
    it = np.arange(1, len(recs) + 1)
    fig, (ax1, ax2) = plt.subplots(2, 1, figsize=(7, 6), sharex=True)
    ax1.plot(it, [r.L_b for r in recs], lw=1.0, color="k")
    starts = [i + 1 for i, r in enumerate(recs) if r.r == 1]
    for s in starts:
        ax1.axvline(s, color="0.85", lw=0.6, zorder=0)
    ax1.set_ylabel("barrier augmented Lagrangian")
    for name, style in (("eps1", "-"), ("eps2", "--"), ("eps3", ":")):
        vals = np.array([getattr(r, name) for r in recs], dtype=float)
        ax2.semilogy(it, np.maximum(vals, 1e-18), style, lw=1.0, label=name)
    ax2.set_xlabel("inner iteration (cumulative)")
    ax2.set_ylabel("residual")
    ax2.legend(loc="upper right", fontsize=8)
    fig.tight_layout()
    return _save(fig, path)


def plot_closed_loop(logs: dict, model, path, timing=True):
    """States and inputs of several controllers on shared axes, plus solve effort.

    With ``timing=False`` the wall-clock panel stays empty so that the
    figure is reproducible byte for byte.
    """
    path = Path(path)
    fig, axes = plt.subplots(2, 4, figsize=(13, 6))
    hss = np.asarray(model.h_ss)
    vss = np.asarray(model.v_ss)
    for name, log in logs.items():
        t = np.asarray(log.t)
        H = log.states
        for j in range(4):
            axes[0, j].plot(t[: len(H)], H[:, j], lw=1.0, label=name)
        V = log.inputs
        if len(V):
            for j in range(2):
                axes[1, j].step(t[: len(V)], V[:, j], where="post", lw=1.0, label=name)
    for j in range(4):
        axes[0, j].axhline(hss[j], color="0.6", lw=0.6, ls="--")
        axes[0, j].set_title(f"h{j + 1} (cm)", fontsize=9)
    for j in range(2):
        axes[1, j].axhline(vss[j], color="0.6", lw=0.6, ls="--")
        axes[1, j].set_title(f"v{j + 1} (V)", fontsize=9)
    names = list(logs)
    iters = [int(np.sum(logs[n].solve_iters)) for n in names]
    times = [float(np.sum(logs[n].solve_time)) for n in names]
    axes[1, 2].bar(range(len(names)), iters, color="0.4")
    axes[1, 2].set_xticks(range(len(names)), names, rotation=30, fontsize=7)
    axes[1, 2].set_title("Newton steps", fontsize=9)
    if timing:
        axes[1, 3].bar(range(len(names)), times, color="0.6")
        axes[1, 3].set_xticks(range(len(names)), names, rotation=30, fontsize=7)
    else:
        axes[1, 3].text(0.5, 0.5, "timing off", ha="center", va="center", transform=axes[1, 3].transAxes)
        axes[1, 3].set_xticks([])
    axes[1, 3].set_title("solve time (s)", fontsize=9)
    axes[0, 0].legend(fontsize=7)
    fig.tight_layout()
    return _save(fig, path)


def plot_counts(results: dict, path):
    """Bar chart of inner iterations and Newton steps per variant."""
    path = Path(path)
    names = list(results)
    fig, ax = plt.subplots(1, 2, figsize=(8, 3.5))
    ax[0].bar(names, [results[n]["inner_iterations"] for n in names], color="0.4")
    ax[0].set_title("inner iterations")
    ax[1].bar(names, [results[n]["nlp_iterations"] for n in names], color="0.6")
    ax[1].set_title("Newton steps")
    for a in ax:
        a.set_yscale("log")
    fig.tight_layout()
    return _save(fig, path)
