"""PNG figures written next to the CSV reports.

Figures are saved without a software tag or timestamp so repeated runs
produce identical files.
"""

from __future__ import annotations

from pathlib import Path
from typing import Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

_META = {"Software": None}


def _save(fig, path) -> Path:
    path = Path(path)
    fig.savefig(path, dpi=100, metadata=_META)
    plt.close(fig)
    return path


def plot_front(scenarios: Sequence, front: Sequence[bool], path, xlabel: str = "HGR (premium vs S)") -> Path:
    """Fairness against RMSE, front members filled."""
    fig, ax = plt.subplots(figsize=(6, 4.5))
    for s, on in zip(scenarios, front):
        if s.failed:
            continue
        ax.scatter(s.fairness, s.performance, s=36, color="C0" if on else "white", edgecolors="C0")
        ax.annotate(s.id, (s.fairness, s.performance), fontsize=7, xytext=(4, 3), textcoords="offset points")
    ax.set_xlabel(xlabel)
    ax.set_ylabel("RMSE")
    ax.grid(alpha=0.3)
    fig.tight_layout()
    return _save(fig, path)


def plot_redist_grid(cells: Sequence, path) -> Path:
    """Integrity against |global variation| for every grid cell, coloured by eta."""
    fig, ax = plt.subplots(figsize=(6, 4.5))
    ok = [c for c in cells if c.report is not None]
    etas = sorted({c.eta for c in ok})
    cmap = plt.get_cmap("viridis", max(len(etas), 1))
    for j, eta in enumerate(etas):
        pts = [c for c in ok if c.eta == eta]
        ax.scatter([abs(c.report.global_variation) for c in pts], [c.report.integrity for c in pts],
                   s=18, color=cmap(j), label=f"eta={eta:g}")
    ax.axhline(0.25, color="grey", lw=0.8, ls="--")
    ax.set_xlabel("|global variation|")
    ax.set_ylabel("integrity")
    ax.legend(fontsize=7, ncol=2)
    ax.grid(alpha=0.3)
    fig.tight_layout()
    return _save(fig, path)


def plot_distributions(values, s, path, bins: int = 60, label: str = "premium") -> Path:
    """Overlaid histograms of a quantity for the two groups."""
    import numpy as np

    values = np.asarray(values, dtype=float)
    s = np.asarray(s)
    edges = np.histogram_bin_edges(values, bins=bins)
    fig, ax = plt.subplots(figsize=(6, 4))
    for g in (0, 1):
        ax.hist(values[s == g], bins=edges, density=True, histtype="step", label=f"S={g}")
    ax.set_xlabel(label)
    ax.set_ylabel("density")
    ax.legend()
    fig.tight_layout()
    return _save(fig, path)
