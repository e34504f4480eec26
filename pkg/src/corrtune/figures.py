"""Report figures rendered next to the delimited outputs."""

from __future__ import annotations

from pathlib import Path
from collections.abc import Sequence

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt

from .bound import BoundRow
from .pipeline import EXPERIMENT_ARMS, ExperimentResult

__all__ = ["plot_bound_convergence", "plot_experiment_arms"]

_LIMIT = 7.0 / 8.0


def plot_bound_convergence(rows: Sequence[BoundRow], path) -> Path:
    """Ceiling versus n on a log axis, with the 7/8 asymptote."""
    fig, ax = plt.subplots(figsize=(6.4, 4.0))
    ns = [r.n for r in rows]
    rhos = [r.max_rho for r in rows]
    ax.semilogx(ns, rhos, marker="o", markersize=3, lw=1.2, label="max rho")
    ax.axhline(_LIMIT, color="crimson", ls="--", lw=1.0, label="limit 7/8 = 0.875")
    ax.set_xlabel("number of pairs n")
    ax.set_ylabel("max Spearman of a binary predictor")
    ax.set_title("Binary-predictor Spearman ceiling")
    ax.legend()
    fig.tight_layout()
    out = Path(path)
    fig.savefig(out, dpi=150)
    plt.close(fig)
    return out


def plot_experiment_arms(results: Sequence[ExperimentResult], path) -> Path:
    """Per-arm test Spearman x100 across seeds, ceiling marked."""
    fig, ax = plt.subplots(figsize=(6.4, 4.0))
    xs = range(len(EXPERIMENT_ARMS))
    for res in results:
        ax.plot(
            xs,
            [res.arms[arm] for arm in EXPERIMENT_ARMS],
            marker="o",
            alpha=0.6,
            label=f"seed {res.seed}",
        )
    if results:
        ax.axhline(
            results[0].ceiling_x100,
            color="crimson",
            ls="--",
            lw=1.0,
            label="binary ceiling",
        )
    ax.set_xticks(list(xs), EXPERIMENT_ARMS)
    ax.set_ylabel("test Spearman x100")
    ax.set_title("Two-stage refinement vs contrastive continuation")
    ax.legend(fontsize=8)
    fig.tight_layout()
    out = Path(path)
    fig.savefig(out, dpi=150)
    plt.close(fig)
    return out
