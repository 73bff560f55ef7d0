"""Matplotlib rendering for run directories.

Every figure is derived from an artifact that also exists in delimited
form (TSV grids, JSON reports); the PNGs are a convenience layer for
inspection, never the canonical output.
"""

from __future__ import annotations

import os

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

__all__ = [
    "render_weight_heatmap",
    "render_training_curves",
    "render_metric_bars",
    "render_sample_preview",
]

_DPI = 120


def render_weight_heatmap(grid: np.ndarray, title: str, path) -> str:
    """Heat map of one realized weight matrix (rows are outputs)."""
    fig, ax = plt.subplots(figsize=(6, 4))
    im = ax.imshow(grid, aspect="auto", cmap="viridis", interpolation="nearest")
    ax.set_title(title)
    ax.set_xlabel("input position")
    ax.set_ylabel("output position")
    fig.colorbar(im, ax=ax, shrink=0.9)
    fig.tight_layout()
    fig.savefig(path, dpi=_DPI)
    plt.close(fig)
    return str(path)


def render_training_curves(report_dict: dict, path) -> str:
    """Loss curves and the learning-rate trace from a training report."""
    rows = report_dict.get("epochs", [])
    epochs = [r["epoch"] for r in rows]
    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(10, 4))
    if epochs:
        ax1.plot(epochs, [r["train_loss"] for r in rows], label="train")
        ax1.plot(epochs, [r["val_loss"] for r in rows], label="val")
        best = report_dict.get("best_epoch")
        if best:
            ax1.axvline(best, color="gray", linestyle="--", linewidth=1,
                        label=f"best epoch {best}")
        ax1.set_yscale("log")
        ax1.legend()
        ax2.plot(epochs, [r["lr"] for r in rows], color="tab:green")
    ax1.set_xlabel("epoch")
    ax1.set_ylabel("loss")
    ax1.set_title("training progress")
    ax2.set_xlabel("epoch")
    ax2.set_ylabel("learning rate")
    ax2.set_title("lr schedule")
    fig.tight_layout()
    fig.savefig(path, dpi=_DPI)
    plt.close(fig)
    return str(path)


def render_metric_bars(labels: list[str], values: list[float], title: str,
                       path, ylabel: str = "MSE") -> str:
    """Bar chart used for per-variable breakdowns and ablation tables."""
    fig, ax = plt.subplots(figsize=(max(4.0, 1.0 + 0.9 * len(labels)), 4))
    ax.bar(range(len(labels)), values, color="tab:blue")
    ax.set_xticks(range(len(labels)))
    ax.set_xticklabels(labels, rotation=30, ha="right")
    ax.set_ylabel(ylabel)
    ax.set_title(title)
    fig.tight_layout()
    fig.savefig(path, dpi=_DPI)
    plt.close(fig)
    return str(path)


def render_sample_preview(sample, path, max_vars: int = 6) -> str:
    """Observations and query targets of one sample, one panel per
    variable; handy for eyeballing generated datasets."""
    n = min(sample.n_vars, max_vars)
    fig, axes = plt.subplots(n, 1, figsize=(8, 1.8 * n), sharex=True, squeeze=False)
    for v in range(n):
        series, queries = sample.variables[v]
        ax = axes[v][0]
        if len(series):
            ax.plot(series.times, series.values, "o", ms=3, label="observed")
        if len(queries) and queries.targets is not None:
            ax.plot(queries.times, queries.targets, "x", ms=4, color="tab:red",
                    label="target")
        ax.axvline(sample.obs_span[1], color="gray", linewidth=0.8, linestyle=":")
        ax.set_ylabel(f"var {v}")
        if v == 0:
            ax.legend(loc="upper right", fontsize=8)
    axes[-1][0].set_xlabel("time")
    fig.tight_layout()
    fig.savefig(path, dpi=_DPI)
    plt.close(fig)
    return str(path)


def ensure_dir(path) -> str:
    os.makedirs(path, exist_ok=True)
    return str(path)
