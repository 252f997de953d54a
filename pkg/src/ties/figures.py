"""Figure rendering for the report paths; files land next to the TSV output.

matplotlib is imported lazily with the Agg backend so library users never pay
for it and no display is required.
"""

from __future__ import annotations

from typing import Sequence

import numpy as np


def _pyplot():
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    return plt


def render_report_figure(reports, path) -> None:
    """Horizontal bars of median PR-AUC gap per model with MAD error bars."""
    plt = _pyplot()
    names = [r.model_name for r in reports]
    gaps = [r.median_gap for r in reports]
    mads = [r.mad for r in reports]
    fig, ax = plt.subplots(figsize=(7, 0.5 * len(reports) + 1.5))
    pos = np.arange(len(reports))[::-1]
    colors = ["#c44e52" if g < 0 else "#55a868" for g in gaps]
    ax.barh(pos, gaps, xerr=mads, color=colors, height=0.6, capsize=3)
    ax.axvline(0.0, color="black", linewidth=0.8)
    ax.set_yticks(pos)
    ax.set_yticklabels(names)
    ax.set_xlabel("PR-AUC median gap vs baseline (error bar: MAD)")
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def render_projection_figure(coords: np.ndarray, labels: Sequence[int], path) -> None:
    """Scatter of the 2-D projection, colored by class label."""
    plt = _pyplot()
    coords = np.asarray(coords)
    labels = np.asarray(labels)
    fig, ax = plt.subplots(figsize=(6, 5))
    for value, color, name in ((0, "#4c72b0", "normal"), (1, "#dd8452", "flagged")):
        sel = labels == value
        if sel.any():
            ax.scatter(coords[sel, 0], coords[sel, 1], s=8, alpha=0.6,
                       color=color, label=name, linewidths=0)
    ax.set_xlabel("component 1")
    ax.set_ylabel("component 2")
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def render_loss_curve(losses: Sequence[float], path) -> None:
    plt = _pyplot()
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.plot(range(1, len(losses) + 1), losses, marker="o")
    ax.set_xlabel("epoch")
    ax.set_ylabel("mean training loss")
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
