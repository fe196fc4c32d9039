"""Static report figures: scatter + LOWESS, error bars, TTD scatter, heatmaps.

All figures are written as SVG with a fixed hash salt and no embedded
date, so regenerating a report produces byte-identical files.
"""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
matplotlib.rcParams["svg.hashsalt"] = "barbench"

import matplotlib.pyplot as plt
import numpy as np

from .analysis import ConsistencyMatrix, lowess, pearson

METHOD_COLORS = {
    "IID": "#4878d0", "COV": "#57a86a", "ADV": "#d65f5f",
    "OOD-left": "#956cb4", "OOD-right": "#8c613c", "IID-LARGE": "#808080",
}


def _save(fig, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)
    return path


def plot_truth_vs_prediction(per_method: dict[str, tuple], path,
                             bandwidth: float = 0.3) -> Path:
    """Case-by-case scatter of truth vs prediction with a LOWESS curve."""
    fig, ax = plt.subplots(figsize=(5, 5))
    ax.plot([0, 1], [0, 1], color="#bbbbbb", lw=1, ls="--", zorder=0)
    for method, (truth, pred) in sorted(per_method.items()):
        truth = np.asarray(truth, dtype=float)
        pred = np.asarray(pred, dtype=float)
        if truth.size > 2000:  # even stride keeps the figure deterministic
            stride = truth.size // 2000 + 1
            truth, pred = truth[::stride], pred[::stride]
        color = METHOD_COLORS.get(method)
        ax.scatter(truth, pred, s=6, alpha=0.35, color=color, label=method, linewidths=0)
        if truth.size >= 5:
            order = np.argsort(truth, kind="stable")
            smooth = lowess(truth[order], pred[order], bandwidth)
            ax.plot(truth[order], smooth, color=color, lw=1.8)
    ax.set_xlabel("ground truth ratio")
    ax.set_ylabel("predicted ratio")
    ax.set_xlim(0, 1)
    ax.set_ylim(0, 1)
    ax.legend(frameon=False, fontsize=8)
    fig.tight_layout()
    return _save(fig, path)


def plot_error_bars(means: dict[str, float], intervals: dict[str, tuple], path,
                    ylabel: str = "mean absolute error") -> Path:
    """Mean errors per condition with 95% confidence intervals."""
    labels = list(means)
    values = [means[k] for k in labels]
    errs = np.array([[values[i] - intervals[k][0], intervals[k][1] - values[i]]
                     for i, k in enumerate(labels)]).T
    fig, ax = plt.subplots(figsize=(1.2 + 0.9 * len(labels), 3.6))
    colors = [METHOD_COLORS.get(k, "#4878d0") for k in labels]
    ax.bar(range(len(labels)), values, yerr=errs, capsize=3, color=colors, width=0.6)
    ax.set_xticks(range(len(labels)))
    ax.set_xticklabels(labels, rotation=30, ha="right", fontsize=8)
    ax.set_ylabel(ylabel)
    fig.tight_layout()
    return _save(fig, path)


def plot_ttd_vs_error(points: list[dict], path) -> Path:
    """Per-run training-test distance against error, annotated with r."""
    fig, ax = plt.subplots(figsize=(4.5, 4))
    for method in sorted({p["method"] for p in points}):
        sub = [p for p in points if p["method"] == method]
        ax.scatter([p["ttd"] for p in sub], [p["mae"] for p in sub],
                   s=22, color=METHOD_COLORS.get(method), label=method, alpha=0.8)
    if len(points) >= 3:
        r = pearson([p["ttd"] for p in points], [p["mae"] for p in points])
        ax.set_title(f"r = {r:.2f}", fontsize=10)
    ax.set_xlabel("training-test distance")
    ax.set_ylabel("mean absolute error")
    ax.legend(frameon=False, fontsize=8)
    fig.tight_layout()
    return _save(fig, path)


def plot_consistency_heatmap(matrix: ConsistencyMatrix, path, title: str = "") -> Path:
    fig, ax = plt.subplots(figsize=(3.8, 3.2))
    im = ax.imshow(matrix.r, vmin=-1, vmax=1, cmap="RdBu_r")
    ax.set_xticks(range(len(matrix.axis)))
    ax.set_yticks(range(len(matrix.axis)))
    ax.set_xticklabels(matrix.axis, fontsize=8, rotation=30, ha="right")
    ax.set_yticklabels(matrix.axis, fontsize=8)
    for i in range(len(matrix.axis)):
        for j in range(len(matrix.axis)):
            ax.text(j, i, f"{matrix.r[i, j]:.2f}", ha="center", va="center", fontsize=7)
    if title:
        ax.set_title(title, fontsize=10)
    fig.colorbar(im, ax=ax, shrink=0.85)
    fig.tight_layout()
    return _save(fig, path)
