"""Static trajectory figures: ground truth versus predicted paths."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np


def trajectory_figure(split, pred: np.ndarray, obj_rows: np.ndarray,
                      t_rows: np.ndarray, path) -> None:
    """Render one sample's 2D position paths to an image file.

    `split` supplies the targets and conditioning points; `pred` holds the
    model output per pooled target row, with `obj_rows`/`t_rows` mapping
    rows back to objects and times.  Feature layout is (x, y, vx, vy).
    """
    fig, ax = plt.subplots(figsize=(6, 6))
    colors = plt.cm.tab10.colors
    for i, (tt, tx) in enumerate(zip(split.targets.times, split.targets.features)):
        c = colors[i % len(colors)]
        order = np.argsort(tt)
        ax.plot(tx[order, 0], tx[order, 1], "-", color=c, alpha=0.8,
                label=f"object {i} truth")
        rows = np.nonzero(obj_rows == i)[0]
        rows = rows[np.argsort(t_rows[rows])]
        ax.plot(pred[rows, 0], pred[rows, 1], "--", color=c, alpha=0.8,
                label=f"object {i} predicted")
        ct, cx = split.conditioning.times[i], split.conditioning.features[i]
        ax.scatter(cx[:, 0], cx[:, 1], color=c, s=12, zorder=3)
    ax.set_xlabel("x")
    ax.set_ylabel("y")
    ax.set_title("solid: truth, dashed: predicted, dots: conditioning")
    ax.legend(fontsize=7, loc="best")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def training_curve(history: list, path) -> None:
    """Negative-ELBO per epoch from a metric history list."""
    epochs = [r["epoch"] for r in history if r.get("split") == "train"]
    loss = [-r["elbo"] for r in history if r.get("split") == "train"]
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.plot(epochs, loss)
    ax.set_xlabel("epoch")
    ax.set_ylabel("negative ELBO")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
