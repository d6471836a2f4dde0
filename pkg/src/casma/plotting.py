"""Figure style and the four report figures.

Figures are built on bare ``Figure`` objects (no pyplot state) and saved as
SVG with a fixed hash salt and no date stamp, so identical inputs give
identical bytes.
"""

from __future__ import annotations

import math
from pathlib import Path
from typing import Optional, Sequence

import matplotlib
import numpy as np
from matplotlib.figure import Figure

GOLDEN = (math.sqrt(5) - 1.0) / 2.0
COLUMN_WIDTH = 6.5  # inches

PALETTE = {
    "study": "#2b5d8a",
    "pooled": "#b23a48",
    "null": "#666666",
    "grid": "#dddddd",
    "accent": "#e09f3e",
}

STYLE = {
    "font.family": "sans-serif",
    "font.sans-serif": ["DejaVu Sans"],
    "font.size": 9,
    "axes.labelsize": 9,
    "axes.titlesize": 10,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "xtick.labelsize": 8,
    "ytick.labelsize": 8,
    "legend.fontsize": 8,
    "legend.frameon": False,
    "lines.linewidth": 1.0,
    "lines.markersize": 4,
    "svg.fonttype": "none",
    "svg.hashsalt": "casma",
}


def new_figure(height_ratio: float = GOLDEN, width: float = COLUMN_WIDTH) -> Figure:
    return Figure(figsize=(width, width * height_ratio))


def save_svg(fig: Figure, path) -> Path:
    path = Path(path)
    with matplotlib.rc_context(STYLE):
        fig.savefig(path, format="svg", metadata={"Date": None, "Creator": "casma"})
    return path


def _styled(fn):
    def wrapper(*args, **kwargs):
        with matplotlib.rc_context(STYLE):
            return fn(*args, **kwargs)
    wrapper.__name__ = fn.__name__
    wrapper.__doc__ = fn.__doc__
    return wrapper


@_styled
def forest_figure(rows: Sequence[dict], pooled: dict) -> Figure:
    """Forest plot on a log axis.

    ``rows`` carry ``label, rr, rr_low, rr_high, weight``; ``pooled`` carries
    ``rr, rr_low, rr_high``. Marker area scales with the study weight.
    """
    k = len(rows)
    fig = new_figure(height_ratio=max(0.35, 0.08 * (k + 3)))
    ax = fig.add_subplot(1, 1, 1)
    ys = np.arange(k, 0, -1, dtype=float)
    for y, r in zip(ys, rows):
        ax.plot([r["rr_low"], r["rr_high"]], [y, y], color=PALETTE["study"])
        ax.plot([r["rr"]], [y], marker="s", linestyle="none", color=PALETTE["study"],
                markersize=3 + 0.25 * math.sqrt(r["weight"]) * 4)
    d = [(pooled["rr_low"], 0), (pooled["rr"], 0.25), (pooled["rr_high"], 0), (pooled["rr"], -0.25)]
    ax.fill([p[0] for p in d], [p[1] for p in d], color=PALETTE["pooled"])
    ax.axvline(1.0, color=PALETTE["null"], linewidth=0.8, linestyle="--")
    ax.set_xscale("log")
    ax.set_yticks(list(ys) + [0.0])
    ax.set_yticklabels([r["label"] for r in rows] + ["Random effects"])
    ax.set_xlabel("Risk ratio (log scale)")
    ax.set_ylim(-1, k + 1)
    fig.tight_layout()
    return fig


@_styled
def doi_figure(points: Sequence[dict], lfk: Optional[float] = None) -> Figure:
    """Doi plot: effect against folded normal quantile, apex at the bottom."""
    fig = new_figure(height_ratio=0.75, width=4.5)
    ax = fig.add_subplot(1, 1, 1)
    x = [p["effect"] for p in points]
    z = [p["abs_z"] for p in points]
    ax.plot(x, z, marker="o", color=PALETTE["study"])
    ax.invert_yaxis()
    ax.set_xlabel("log risk ratio")
    ax.set_ylabel("|z|")
    if lfk is not None:
        ax.set_title(f"LFK index {lfk:.3f}")
    fig.tight_layout()
    return fig


@_styled
def profile_figure(curve: Sequence[Sequence[float]], low: float, high: float, cutoff: float) -> Figure:
    """Restricted log-likelihood over the tau2 grid with the interval bounds marked."""
    fig = new_figure(height_ratio=0.75, width=4.5)
    ax = fig.add_subplot(1, 1, 1)
    t = [c[0] for c in curve]
    ll = [c[1] for c in curve]
    ax.plot(t, ll, color=PALETTE["study"])
    ax.axhline(cutoff, color=PALETTE["null"], linestyle=":", linewidth=0.8)
    for b in (low, high):
        ax.axvline(b, color=PALETTE["pooled"], linestyle="--", linewidth=0.8)
    ax.set_xlabel(r"$\tau^2$")
    ax.set_ylabel("restricted log-likelihood")
    fig.tight_layout()
    return fig


@_styled
def prisma_figure(stages: Sequence[dict]) -> Figure:
    """Vertical flow of boxes, one per ledger stage, with exclusions on the right."""
    n = len(stages)
    fig = new_figure(height_ratio=max(0.4, 0.22 * (n + 1)))
    ax = fig.add_subplot(1, 1, 1)
    ax.set_axis_off()
    ax.set_xlim(0, 10)
    ax.set_ylim(-n - 0.5, 0.8)
    box = dict(boxstyle="round,pad=0.4", facecolor="white", edgecolor=PALETTE["study"])
    side = dict(boxstyle="round,pad=0.3", facecolor="#f6f6f6", edgecolor=PALETTE["null"])
    for i, s in enumerate(stages):
        y = -i
        ax.text(3.5, y, f"{s['name']}\nin: {s['count_in']}   out: {s['count_out']}", ha="center", va="center",
                bbox=box)
        if s["excluded"]:
            reason = s.get("reason", "")
            label = f"excluded: {s['excluded']}" + (f"\n{reason}" if reason else "")
            ax.text(8.0, y - 0.45, label, ha="center", va="center", bbox=side, fontsize=7)
        if i + 1 < n:
            ax.annotate("", xy=(3.5, y - 0.7), xytext=(3.5, y - 0.3),
                        arrowprops=dict(arrowstyle="->", color=PALETTE["null"]))
    fig.tight_layout()
    return fig
