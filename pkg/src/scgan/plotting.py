"""Figures written next to training logs and evaluation reports."""

from __future__ import annotations

import json
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

GEN_KEYS = ("l_DHL", "l_RLS", "l_DSL")
DISC_KEYS = ("d_L1", "d_L2", "d_H1", "d_H2")


def _smooth(y: np.ndarray, window: int) -> np.ndarray:
    if window <= 1 or len(y) < window:
        return y
    k = np.ones(window) / window
    return np.convolve(y, k, mode="valid")


def read_metrics(path) -> list[dict]:
    return [json.loads(line) for line in Path(path).read_text().splitlines() if line.strip()]


def plot_loss_curves(rows: list[dict], out_path, window: int = 10) -> Path:
    """Two panels: generator objectives and discriminator hinge losses against step."""
    out_path = Path(out_path)
    fig, (ax_g, ax_d) = plt.subplots(1, 2, figsize=(10, 3.8))
    for ax, keys, title in ((ax_g, GEN_KEYS, "generator objectives"), (ax_d, DISC_KEYS, "discriminator losses")):
        for key in keys:
            pts = [(r["step"], r[key]) for r in rows if r.get(key) is not None]
            if not pts:
                continue
            steps, vals = map(np.asarray, zip(*pts))
            ax.plot(steps, vals, alpha=0.25, lw=0.8)
            sm = _smooth(vals, window)
            ax.plot(steps[len(steps) - len(sm):], sm, lw=1.6, label=key, color=ax.lines[-1].get_color())
        ax.set_xlabel("step")
        ax.set_title(title)
        ax.grid(alpha=0.3)
        if ax.lines:
            ax.legend(frameon=False, fontsize=8)
    fig.tight_layout()
    fig.savefig(out_path, dpi=120)
    plt.close(fig)
    return out_path


def plot_sample_grid(columns: dict[str, list[np.ndarray]], out_path, max_rows: int = 6) -> Path:
    """Image grid: one column per named image list (file01 H x W x 3), rows aligned."""
    out_path = Path(out_path)
    names = list(columns)
    n = min(max_rows, min(len(v) for v in columns.values()))
    if n == 0:
        raise ValueError("no images to plot")
    fig, axes = plt.subplots(n, len(names), figsize=(1.8 * len(names), 1.8 * n), squeeze=False)
    for j, name in enumerate(names):
        for i in range(n):
            ax = axes[i][j]
            ax.imshow(np.clip(columns[name][i], 0, 1), interpolation="nearest")
            ax.set_xticks([])
            ax.set_yticks([])
            if i == 0:
                ax.set_title(name, fontsize=9)
    fig.tight_layout()
    fig.savefig(out_path, dpi=120)
    plt.close(fig)
    return out_path


def plot_metric_histogram(values: dict[str, list[float]], out_path) -> Path:
    out_path = Path(out_path)
    fig, axes = plt.subplots(1, len(values), figsize=(4 * len(values), 3), squeeze=False)
    for ax, (name, vals) in zip(axes[0], values.items()):
        finite = [v for v in vals if np.isfinite(v)]
        ax.hist(finite, bins=min(20, max(1, len(finite))), color="0.4")
        ax.set_title(name)
        ax.grid(alpha=0.3)
    fig.tight_layout()
    fig.savefig(out_path, dpi=120)
    plt.close(fig)
    return out_path
