"""Report figures written next to the eval CSV."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .classes import DISPLAY_NAMES, PALETTE  # noqa: E402

# fixed metadata keeps PNG bytes reproducible
_META = {"Software": None}


def _rgb(cls):
    return tuple(c / 255 for c in PALETTE[cls])


def iou_bars(per_class, mean, path, names=DISPLAY_NAMES):
    fig, ax = plt.subplots(figsize=(7, 3.2), dpi=100)
    x = np.arange(len(names))
    vals = [0.0 if v is None else 100 * float(v) for v in per_class]
    ax.bar(x, vals, color=[_rgb(k) for k in range(len(names))], edgecolor="black", linewidth=0.5)
    for xi, v in zip(x, per_class):
        if v is None:
            ax.text(xi, 1, "n/a", ha="center", va="bottom", fontsize=7)
    if mean is not None:
        ax.axhline(100 * float(mean), color="gray", ls="--", lw=1, label=f"mIoU {100 * float(mean):.2f}")
        ax.legend(loc="upper right", fontsize=8)
    ax.set_xticks(x, names, rotation=30, ha="right", fontsize=8)
    ax.set_ylim(0, 100)
    ax.set_ylabel("IoU [%]")
    fig.tight_layout()
    fig.savefig(path, metadata=_META)
    plt.close(fig)


def confusion_heatmap(counts, path, names=DISPLAY_NAMES):
    """Row-normalised confusion matrix (rows = reference)."""
    c = np.asarray(counts, dtype=np.float64)
    rows = c.sum(axis=1, keepdims=True)
    norm = np.divide(c, rows, out=np.zeros_like(c), where=rows > 0)
    fig, ax = plt.subplots(figsize=(5.2, 4.6), dpi=100)
    im = ax.imshow(norm, vmin=0, vmax=1, cmap="Blues")
    for i in range(len(names)):
        for j in range(len(names)):
            if c[i, j]:
                ax.text(j, i, f"{norm[i, j]:.2f}", ha="center", va="center", fontsize=6,
                        color="white" if norm[i, j] > 0.5 else "black")
    ax.set_xticks(range(len(names)), names, rotation=45, ha="right", fontsize=7)
    ax.set_yticks(range(len(names)), names, fontsize=7)
    ax.set_xlabel("predicted")
    ax.set_ylabel("reference")
    fig.colorbar(im, ax=ax, fraction=0.046)
    fig.tight_layout()
    fig.savefig(path, metadata=_META)
    plt.close(fig)
