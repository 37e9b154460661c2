"""Figure rendering for run reports. All figures are written to files; the
delimited data they are drawn from is emitted alongside by the callers."""

from __future__ import annotations

import csv
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np


def render_toy_figure(result, path) -> None:
    """Three panels: reweighting oracle heatmap, guided samples, unguided
    samples."""
    grid = result.grid
    fig, axes = plt.subplots(1, 3, figsize=(13, 4.2), constrained_layout=True)
    extent = [grid.low, grid.high, grid.low, grid.high]
    heat = result.oracle.reshape(grid.bins, grid.bins).T
    axes[0].imshow(heat, origin="lower", extent=extent, cmap="viridis")
    axes[0].set_title(f"reweighting oracle ({grid.bins}x{grid.bins})")
    for ax, samples, tv, label in (
            (axes[1], result.guided_samples, result.guided_tv, "guided"),
            (axes[2], result.unguided_samples, result.unguided_tv, "unguided")):
        sub = samples[:5000]
        ax.scatter(sub[:, 0], sub[:, 1], s=2, alpha=0.25, linewidths=0)
        ax.set_xlim(grid.low, grid.high)
        ax.set_ylim(grid.low, grid.high)
        ax.set_title(f"{label} samples (TV={tv:.3f})")
    fig.savefig(path, dpi=120)
    plt.close(fig)


def render_training_curves(metrics_csv, path) -> None:
    """Learning-curve panel from a run's metrics CSV."""
    with open(metrics_csv) as f:
        rows = list(csv.DictReader(f))
    if not rows:
        return
    steps = np.array([float(r["step"]) for r in rows])
    fig, axes = plt.subplots(2, 2, figsize=(10, 7), constrained_layout=True)
    panels = [("episode_return", "evaluation return"),
              ("td_loss", "TD loss"),
              ("constraint_term", "weighted CFM term"),
              ("mean_weight", "mean weight")]
    for ax, (key, title) in zip(axes.ravel(), panels):
        vals = np.array([float(r[key]) for r in rows])
        ax.plot(steps, vals)
        ax.set_title(title)
        ax.set_xlabel("env step")
    fig.savefig(path, dpi=120)
    plt.close(fig)
