"""Figures written next to the CSV outputs: KC heatmaps and k-sweep curves."""

from __future__ import annotations

from pathlib import Path
from typing import Sequence

import matplotlib

matplotlib.use("Agg")

import numpy as np
from matplotlib import rc_context
from matplotlib.colors import LinearSegmentedColormap
from matplotlib.figure import Figure
from matplotlib.patches import Rectangle

RAMP_LOW = "#f7f7f7"
RAMP_HIGH = "#08306b"
RAMP = LinearSegmentedColormap.from_list("gray_to_blue", [RAMP_LOW, RAMP_HIGH])

SVG_RC = {"svg.fonttype": "none", "svg.hashsalt": "sparsekt", "font.size": 9}


def export_heatmap(
    matrix,
    labels: Sequence,
    path: str | Path,
    title: str | None = None,
    xlabel: str = "post-interaction KC",
    ylabel: str = "pre-interaction KC",
) -> Path:
    """Write a standalone SVG grid heatmap with 2-decimal cell annotations.

    Every cell is its own ``<g id="cell-i-j">`` group and axis labels are
    ``xlabel-j`` / ``ylabel-i`` groups, so the document can be inspected
    without rendering.
    """
    matrix = np.atleast_2d(np.asarray(matrix, dtype=float))
    if matrix.size and (matrix.min() < 0 or matrix.max() > 1):
        raise ValueError("heatmap values must lie in [0, 1]")
    rows, cols = matrix.shape
    if len(labels) != rows or rows != cols:
        raise ValueError("need a square matrix with one label per row")
    side = 1.2 + 0.55 * cols
    path = Path(path)
    with rc_context(SVG_RC):
        fig = Figure(figsize=(side + 1.0, side), dpi=100)
        ax = fig.add_subplot()
        for i in range(rows):
            for j in range(cols):
                v = matrix[i, j]
                ax.add_patch(Rectangle((j, i), 1, 1, facecolor=RAMP(v), edgecolor="white", lw=0.5, gid=f"cell-{i}-{j}"))
                ax.text(j + 0.5, i + 0.5, f"{v:.2f}", ha="center", va="center",
                        color="white" if v > 0.55 else "black", fontsize=7)
        ax.set_xlim(0, cols)
        ax.set_ylim(rows, 0)
        ax.set_aspect("equal")
        ax.set_xticks(np.arange(cols) + 0.5)
        ax.set_yticks(np.arange(rows) + 0.5)
        ax.set_xticklabels([str(x) for x in labels])
        ax.set_yticklabels([str(x) for x in labels])
        for j, t in enumerate(ax.get_xticklabels()):
            t.set_gid(f"xlabel-{j}")
        for i, t in enumerate(ax.get_yticklabels()):
            t.set_gid(f"ylabel-{i}")
        ax.tick_params(length=0)
        for spine in ax.spines.values():
            spine.set_visible(False)
        ax.set_xlabel(xlabel)
        ax.set_ylabel(ylabel)
        if title:
            ax.set_title(title)
        mappable = matplotlib.cm.ScalarMappable(cmap=RAMP, norm=matplotlib.colors.Normalize(0, 1))
        fig.colorbar(mappable, ax=ax, fraction=0.046, pad=0.04)
        fig.tight_layout()
        fig.savefig(path, format="svg", metadata={"Date": None})
    return path


def plot_sweep(curves: dict[str, dict[float, float]], path: str | Path, title: str | None = None) -> Path:
    """Validation AUC against ``k``, one line per sparsity mode."""
    path = Path(path)
    with rc_context(SVG_RC):
        fig = Figure(figsize=(4.5, 3.2), dpi=100)
        ax = fig.add_subplot()
        for mode, points in curves.items():
            ks = list(points)
            ax.plot(ks, [points[k] for k in ks], marker="o", ms=4, lw=1.2, label=mode)
        ax.set_xlabel("k")
        ax.set_ylabel("validation AUC")
        ax.grid(alpha=0.3)
        if len(curves) > 1:
            ax.legend(frameon=False)
        if title:
            ax.set_title(title)
        fig.tight_layout()
        fmt = path.suffix.lstrip(".") or "svg"
        fig.savefig(path, format=fmt, **({"metadata": {"Date": None}} if fmt == "svg" else {}))
    return path
