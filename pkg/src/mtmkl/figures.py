"""Figure rendering for the report path.

Every report-producing command writes these PNGs next to its delimited
output; the delimited files remain the authoritative record.
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

__all__ = [
    "similarity_heatmap", "auc_bars", "roc_figure", "theta_trajectory_figure",
]


def similarity_heatmap(matrix, path, title="task similarity"):
    fig, ax = plt.subplots(figsize=(5.2, 4.4))
    im = ax.imshow(np.asarray(matrix), cmap="viridis", interpolation="nearest")
    ax.set_xlabel("task")
    ax.set_ylabel("task")
    ax.set_title(title)
    fig.colorbar(im, ax=ax, shrink=0.85)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def auc_bars(summary_rows, path):
    """Mean AUC per method with a std whisker when several seeds ran."""
    methods = [r["method"] for r in summary_rows]
    means = [r["mean_auc"] for r in summary_rows]
    stds = [r.get("std_auc", 0.0) for r in summary_rows]
    fig, ax = plt.subplots(figsize=(1.2 + 0.9 * len(methods), 4.0))
    xs = np.arange(len(methods))
    ax.bar(xs, means, yerr=stds, capsize=3, color="steelblue")
    ax.set_xticks(xs)
    ax.set_xticklabels(methods, rotation=30, ha="right")
    ax.set_ylabel("mean AUC over tasks")
    lo = min(means) - 0.05
    ax.set_ylim(max(0.0, lo), min(1.0, max(means) + 0.05))
    ax.grid(axis="y", alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def roc_figure(roc_by_task, path, title="per-task ROC"):
    """Thin per-task curves for one method."""
    fig, ax = plt.subplots(figsize=(4.6, 4.4))
    for t in sorted(roc_by_task):
        pts = np.asarray(roc_by_task[t])
        ax.plot(pts[:, 0], pts[:, 1], lw=0.7, alpha=0.5)
    ax.plot([0, 1], [0, 1], "k--", lw=0.8)
    ax.set_xlabel("false positive rate")
    ax.set_ylabel("true positive rate")
    ax.set_title(title)
    ax.set_xlim(0, 1)
    ax.set_ylim(0, 1)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def theta_trajectory_figure(theta_trajectory, path):
    """Kernel weights per epoch (epoch 0 is the uniform initialization)."""
    traj = np.asarray(theta_trajectory)
    fig, ax = plt.subplots(figsize=(5.4, 4.0))
    for m in range(traj.shape[1]):
        ax.plot(traj[:, m], lw=0.9)
    ax.set_xlabel("epoch")
    ax.set_ylabel("kernel weight")
    ax.set_title("kernel-weight trajectory")
    ax.grid(alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
