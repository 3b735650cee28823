"""Report figures written next to the CSV/JSON outputs."""

from __future__ import annotations

from pathlib import Path
from typing import Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .metrics import CONFUSION_LABELS, ImageStats  # noqa: E402

# fixed metadata keeps PNG output byte-stable between runs
_PNG_META = {"Software": None}


def _save(fig, path: Path) -> Path:
    fig.tight_layout()
    fig.savefig(path, dpi=100, metadata=_PNG_META)
    plt.close(fig)
    return path


def plot_confusion_matrix(normalized: np.ndarray, path: Path, title: str = "Normalized confusion matrix") -> Path:
    fig, ax = plt.subplots(figsize=(5.5, 4.5))
    im = ax.imshow(normalized, cmap="Blues", vmin=0.0, vmax=1.0)
    ticks = range(len(CONFUSION_LABELS))
    ax.set_xticks(ticks, CONFUSION_LABELS, rotation=30, ha="right")
    ax.set_yticks(ticks, CONFUSION_LABELS)
    ax.set_xlabel("predicted")
    ax.set_ylabel("true")
    for (i, j), v in np.ndenumerate(normalized):
        ax.text(j, i, f"{v:.2f}", ha="center", va="center",
                color="white" if v > 0.5 else "black", fontsize=9)
    ax.set_title(title)
    fig.colorbar(im, ax=ax, fraction=0.046)
    return _save(fig, path)


def plot_counts(stats: Sequence[ImageStats], path: Path) -> Path:
    """Predicted vs ground-truth crystal count per image."""
    fig, ax = plt.subplots(figsize=(4.5, 4.5))
    gt = [s.cnt_gt for s in stats]
    pred = [s.cnt_pred for s in stats]
    top = max(gt + pred + [1])
    ax.plot([0, top], [0, top], color="0.6", lw=1, ls="--")
    ax.scatter(gt, pred, s=18)
    ax.set_xlabel("ground-truth count")
    ax.set_ylabel("predicted count")
    ax.set_xlim(0, top * 1.05)
    ax.set_ylim(0, top * 1.05)
    return _save(fig, path)


def plot_size_distribution(pred_um: Sequence[float], gt_um: Sequence[float], path: Path) -> Path:
    fig, ax = plt.subplots(figsize=(5.5, 3.5))
    data = [d for d in (gt_um, pred_um) if len(d)]
    if data:
        bins = np.histogram_bin_edges(np.concatenate(data), bins=20)
        if len(gt_um):
            ax.hist(gt_um, bins=bins, histtype="step", lw=1.5, label="ground truth")
        if len(pred_um):
            ax.hist(pred_um, bins=bins, histtype="step", lw=1.5, label="predicted")
        ax.legend(frameon=False)
    ax.set_xlabel("equivalent diameter (um)")
    ax.set_ylabel("crystals")
    return _save(fig, path)


def plot_bench(samples: Sequence[float], budget: float, path: Path) -> Path:
    fig, ax = plt.subplots(figsize=(5.5, 3.5))
    ax.plot(range(1, len(samples) + 1), samples, marker="o")
    ax.axhline(budget, color="tab:red", ls="--", lw=1, label=f"budget {budget:g} s")
    ax.set_xlabel("repeat")
    ax.set_ylabel("post-processing wall clock (s)")
    ax.set_ylim(bottom=0)
    ax.legend(frameon=False)
    return _save(fig, path)
