"""Matplotlib figures written next to the delimited stage outputs."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

STYLE = {
    "font.size": 9,
    "axes.labelsize": 9,
    "axes.titlesize": 10,
    "legend.fontsize": 8,
    "xtick.labelsize": 8,
    "ytick.labelsize": 8,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "figure.dpi": 100,
    "savefig.dpi": 120,
    "savefig.bbox": "tight",
    "svg.hashsalt": "hsidiff",
}


def _save(fig, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, metadata={"Software": None})
    plt.close(fig)
    return path


def moving_average(y, window: int) -> np.ndarray:
    y = np.asarray(y, dtype=float)
    if window <= 1 or len(y) < window:
        return y
    c = np.cumsum(np.insert(y, 0, 0.0))
    return (c[window:] - c[:-window]) / window


def plot_loss_curve(trace, path, title: str = "Denoiser pretraining", window: int = 50) -> Path:
    steps = np.array([s for s, _ in trace])
    loss = np.array([v for _, v in trace])
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(5, 3))
        ax.plot(steps, loss, lw=0.5, alpha=0.35, color="0.4", label="step loss")
        sm = moving_average(loss, window)
        if len(sm) != len(loss):
            ax.plot(steps[window - 1:], sm, lw=1.2, color="C0", label=f"{window}-step mean")
        ax.set_xlabel("optimizer step")
        ax.set_ylabel("noise-prediction MSE")
        ax.set_title(title)
        ax.legend(frameon=False)
        return _save(fig, path)


def plot_training_curve(trace, path, title: str = "Classifier training") -> Path:
    epochs = [e for e, _, _ in trace]
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(5, 3))
        ax.plot(epochs, [l for _, l, _ in trace], color="C0", label="loss")
        ax.set_xlabel("epoch")
        ax.set_ylabel("cross-entropy")
        ax2 = ax.twinx()
        ax2.plot(epochs, [a for _, _, a in trace], color="C1", label="train accuracy")
        ax2.set_ylabel("accuracy")
        ax2.set_ylim(0, 1.02)
        ax.set_title(title)
        return _save(fig, path)


def plot_confusion(confusion, path, class_names=None, title: str = "Confusion matrix") -> Path:
    cm = np.asarray(confusion)
    n = cm.shape[0]
    rows = cm.sum(axis=1, keepdims=True)
    frac = np.divide(cm, rows, out=np.zeros(cm.shape, dtype=float), where=rows > 0)
    with plt.rc_context(STYLE):
        size = max(3.5, 0.35 * n + 1.5)
        fig, ax = plt.subplots(figsize=(size, size))
        ax.imshow(frac, cmap="Blues", vmin=0, vmax=1)
        ticks = np.arange(n)
        labels = class_names or [str(i + 1) for i in ticks]
        ax.set_xticks(ticks, [str(i + 1) for i in ticks])
        ax.set_yticks(ticks, [f"{i + 1} {labels[i]}"[:24] for i in ticks])
        if n <= 16:
            for i in range(n):
                for j in range(n):
                    if cm[i, j]:
                        ax.text(j, i, str(cm[i, j]), ha="center", va="center", fontsize=6,
                                color="white" if frac[i, j] > 0.5 else "black")
        ax.set_xlabel("predicted class")
        ax.set_ylabel("true class")
        ax.set_title(title)
        return _save(fig, path)


def plot_map_comparison(panels: dict, path, title: str = "") -> Path:
    """Side-by-side RGB rasters, e.g. {"ground truth": a, "prediction": b}."""
    with plt.rc_context(STYLE):
        fig, axes = plt.subplots(1, len(panels), figsize=(3 * len(panels), 3.2))
        for ax, (name, img) in zip(np.atleast_1d(axes), panels.items()):
            ax.imshow(img, interpolation="nearest")
            ax.set_title(name)
            ax.set_axis_off()
        if title:
            fig.suptitle(title)
        return _save(fig, path)


def false_color(data: np.ndarray) -> np.ndarray:
    """Three evenly spaced bands stretched to [0, 1] for display."""
    B = data.shape[2]
    idx = [int(round(i)) for i in np.linspace(B - 1, 0, 3)]
    rgb = data[:, :, idx].astype(float)
    lo, hi = np.percentile(rgb, 2), np.percentile(rgb, 98)
    return np.clip((rgb - lo) / (hi - lo if hi > lo else 1.0), 0, 1)


def plot_ablation(rows, path, title: str = "OA by timestep and feature index") -> Path:
    ts = sorted({r.timestep for r in rows})
    fs = sorted({r.feature_index for r in rows})
    grid = np.full((len(fs), len(ts)), np.nan)
    # one panel: the first training fraction of the grid
    frac0 = rows[0].fraction if rows else None
    for r in rows:
        if r.ok and r.fraction == frac0:
            grid[fs.index(r.feature_index), ts.index(r.timestep)] = 100 * r.oa
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(1 + 0.9 * len(ts), 1 + 0.7 * len(fs)))
        im = ax.imshow(grid, cmap="viridis", aspect="auto")
        ax.set_xticks(range(len(ts)), [str(t) for t in ts])
        ax.set_yticks(range(len(fs)), [str(f) for f in fs])
        for i in range(len(fs)):
            for j in range(len(ts)):
                if np.isfinite(grid[i, j]):
                    ax.text(j, i, f"{grid[i, j]:.2f}", ha="center", va="center", fontsize=7, color="white")
        ax.set_xlabel("timestep")
        ax.set_ylabel("feature index")
        ax.set_title(title)
        fig.colorbar(im, ax=ax, label="OA (%)")
        return _save(fig, path)
