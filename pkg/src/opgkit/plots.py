"""Figure rendering for CLI report paths.

Every evaluation command writes its delimited tables first and then renders
a figure next to them; plotting failures must never corrupt the data
outputs, so these helpers are called last.
"""

from __future__ import annotations

from pathlib import Path
from typing import Sequence

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt

from .summary import RocCurve


def save_roc_grid(curves: dict[str, "RocCurve | None"], path: str | Path) -> None:
    """One ROC panel per finding type, AUC and max-F1 point annotated."""
    names = list(curves)
    cols = 3
    rows = (len(names) + cols - 1) // cols
    fig, axes = plt.subplots(rows, cols, figsize=(3.6 * cols, 3.2 * rows), squeeze=False)
    for ax, name in zip(axes.ravel(), names):
        curve = curves[name]
        ax.set_title(name)
        ax.set_xlabel("FPR")
        ax.set_ylabel("TPR")
        ax.set_xlim(-0.02, 1.02)
        ax.set_ylim(-0.02, 1.02)
        ax.plot([0, 1], [0, 1], ls=":", c="gray", lw=0.8)
        if curve is None:
            ax.text(0.5, 0.5, "single-class\n(not evaluable)", ha="center", va="center")
            continue
        fpr = [0.0] + [1.0 - tnr for _t, _tpr, tnr, _f1 in curve.points]
        tpr = [0.0] + [p[1] for p in curve.points]
        ax.plot(fpr, tpr, marker=".", ms=3, lw=1.2)
        best = max(curve.points, key=lambda p: p[3])
        ax.plot([1.0 - best[2]], [best[1]], marker="o", ms=6, mfc="none", c="crimson")
        ax.annotate(
            f"AUC {curve.auc:.3f}\nmax F1 {curve.max_f1:.3f} @ {curve.max_f1_threshold:.4g}",
            xy=(0.97, 0.05),
            xycoords="axes fraction",
            ha="right",
            fontsize=8,
        )
    for ax in axes.ravel()[len(names):]:
        ax.axis("off")
    fig.tight_layout()
    fig.savefig(path, dpi=110)
    plt.close(fig)


def save_pr_curves(
    staircases: dict[str, tuple[Sequence[float], Sequence[float]]], path: str | Path
) -> None:
    """Precision-recall staircases, one line per IoU threshold."""
    fig, ax = plt.subplots(figsize=(4.6, 3.6))
    for label, (recall, precision) in staircases.items():
        ax.plot(list(recall), list(precision), drawstyle="steps-post", label=label, lw=1.3)
    ax.set_xlabel("recall")
    ax.set_ylabel("precision")
    ax.set_xlim(-0.02, 1.02)
    ax.set_ylim(-0.02, 1.05)
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=110)
    plt.close(fig)


def save_trajectory(
    steps: Sequence[int],
    mean_reward: Sequence[float],
    accuracy: Sequence[float],
    path: str | Path,
) -> None:
    """Training trajectory: sampled reward and post-decode accuracy."""
    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(8.0, 3.2))
    ax1.plot(list(steps), list(mean_reward), lw=1.0)
    ax1.set_xlabel("step")
    ax1.set_ylabel("mean sampled reward")
    ax2.plot(list(steps), list(accuracy), lw=1.0, c="darkorange")
    ax2.set_xlabel("step")
    ax2.set_ylabel("assignment accuracy")
    ax2.set_ylim(-0.02, 1.02)
    fig.tight_layout()
    fig.savefig(path, dpi=110)
    plt.close(fig)
