"""Figure-style outputs with byte-stable metadata (SVG and PNG)."""
from pathlib import Path

import numpy as np

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

plt.rcParams["svg.hashsalt"] = "deephybrid"


def _save(fig, path):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    meta = {"Date": None} if path.suffix == ".svg" else {"Software": None}
    fig.savefig(path, metadata=meta)
    plt.close(fig)
    return path


def montage(tiles, n_rows, n_cols, path, titles=None):
    """Tiles (row-major, H x W x C) arranged as an n_rows x n_cols grid."""
    fig, axes = plt.subplots(n_rows, n_cols, figsize=(1.2 * n_cols, 1.2 * n_rows), squeeze=False)
    for i, ax in enumerate(axes.flat):
        ax.axis("off")
        if i < len(tiles):
            ax.imshow(np.clip(tiles[i], 0, 1), interpolation="nearest")
            if titles is not None:
                ax.set_title(titles[i], fontsize=6)
    return _save(fig, path)


def share_heatmaps(shares, n_rows, n_cols, modes, path, row_labels=None, col_labels=None):
    """One heat-map per mode of grid-cell shares (``shares``: cells x modes)."""
    shares = np.asarray(shares, dtype=float)
    fig, axes = plt.subplots(1, len(modes), figsize=(2.6 * len(modes), 2.4), squeeze=False)
    for k, ax in enumerate(axes[0]):
        im = ax.imshow(shares[:, k].reshape(n_rows, n_cols), cmap="viridis", origin="upper")
        ax.set_title(modes[k], fontsize=8)
        if row_labels is not None:
            ax.set_yticks(range(n_rows), [f"{a:g}" for a in row_labels], fontsize=6)
        if col_labels is not None:
            ax.set_xticks(range(n_cols), [f"{a:g}" for a in col_labels], fontsize=6)
        fig.colorbar(im, ax=ax, fraction=0.046)
    fig.tight_layout()
    return _save(fig, path)


def scatter(xy, values, path, label=""):
    xy = np.asarray(xy, dtype=float)
    fig, ax = plt.subplots(figsize=(4, 4))
    pts = ax.scatter(xy[:, 0], xy[:, 1], c=values, s=10, cmap="coolwarm")
    fig.colorbar(pts, ax=ax, label=label)
    ax.set_xticks([])
    ax.set_yticks([])
    return _save(fig, path)


def sparsity_path(thetas, nonzero, test_metric, path):
    fig, ax = plt.subplots(figsize=(4.5, 3))
    ax.semilogx(thetas, nonzero, "o-", color="C0")
    ax.set_xlabel("theta")
    ax.set_ylabel("non-zero coefficients", color="C0")
    ax2 = ax.twinx()
    ax2.semilogx(thetas, test_metric, "s--", color="C1")
    ax2.set_ylabel("test metric", color="C1")
    fig.tight_layout()
    return _save(fig, path)


def loss_curves(history, path):
    fig, ax = plt.subplots(figsize=(4.5, 3))
    for term in history.terms():
        steps = [s for s, t, _ in history if t == term]
        ax.plot(steps, history.series(term), label=term, lw=0.8)
    ax.set_yscale("symlog")
    ax.set_xlabel("step")
    ax.legend(fontsize=6)
    fig.tight_layout()
    return _save(fig, path)
