"""Report figures for ``voxpano eval`` and ``voxpano bench``.

Rendering is headless (Agg) and every function writes one file and
returns its path.
"""
from __future__ import annotations

import math
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

RC = {
    "font.size": 9,
    "axes.labelsize": 9,
    "axes.titlesize": 10,
    "legend.fontsize": 8,
    "xtick.labelsize": 7,
    "ytick.labelsize": 8,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "savefig.dpi": 150,
    "savefig.bbox": "tight",
}


def figsize(width=6.5, ratio=None):
    if ratio is None:
        ratio = (math.sqrt(5) - 1.0) / 2.0
    return (width, width * ratio)


def _save(fig, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    # fixed metadata keeps PNG bytes stable across runs
    fig.savefig(path, metadata={"Software": None})
    plt.close(fig)
    return path


def plot_class_scores(names, iou, pq, path) -> Path:
    """Grouped bars of per-class IoU and PQ; NaN entries are left blank."""
    iou = np.asarray(iou, dtype=float)
    pq = np.asarray(pq, dtype=float)
    x = np.arange(len(names))
    with plt.rc_context(RC):
        fig, ax = plt.subplots(figsize=figsize(7.0, 0.45))
        ax.bar(x - 0.2, np.nan_to_num(iou), width=0.4, label="IoU", color="#4c72b0")
        ax.bar(x + 0.2, np.nan_to_num(pq), width=0.4, label="PQ", color="#dd8452")
        ax.set_xticks(x)
        ax.set_xticklabels(names, rotation=60, ha="right")
        ax.set_ylim(0, 1.05)
        ax.set_ylabel("score")
        ax.legend(frameon=False, ncol=2, loc="upper right")
        return _save(fig, path)


def _top_view(ids: np.ndarray) -> np.ndarray:
    """Highest non-zero id along z for each BEV pixel (0 where the column is empty)."""
    nz = ids != 0
    top = ids.shape[2] - 1 - np.argmax(nz[:, :, ::-1], axis=2)
    view = np.take_along_axis(ids, top[:, :, None], axis=2)[:, :, 0]
    return np.where(nz.any(axis=2), view, 0)


def _id_colors(view: np.ndarray) -> np.ndarray:
    # hash ids to hues so the same id gets the same color in both panels
    rgb = np.ones(view.shape + (3,))
    ids = np.unique(view)
    cmap = plt.get_cmap("hsv")
    for i in ids[ids != 0]:
        hue = (int(i) * 0.61803398875) % 1.0
        rgb[view == i] = cmap(hue)[:3]
    return rgb


def plot_bev_panoptic(pred_ids, gt_ids, path, title_pred="prediction", title_gt="ground truth"):
    with plt.rc_context(RC):
        fig, axes = plt.subplots(1, 2, figsize=figsize(7.0, 0.5))
        for ax, ids, title in zip(axes, (pred_ids, gt_ids), (title_pred, title_gt)):
            ax.imshow(_id_colors(_top_view(np.asarray(ids))).transpose(1, 0, 2),
                      origin="lower", interpolation="nearest")
            ax.set_title(title)
            ax.set_xlabel("x index")
            ax.set_ylabel("y index")
        return _save(fig, path)


def plot_stage_latency(samples_us: dict, path) -> Path:
    """Per-stage latency distributions in milliseconds."""
    stages = [s for s in samples_us if len(samples_us[s])]
    with plt.rc_context(RC):
        fig, ax = plt.subplots(figsize=figsize(5.0))
        data = [np.asarray(samples_us[s]) / 1e3 for s in stages]
        ax.boxplot(data, showfliers=True)
        ax.set_xticks(np.arange(1, len(stages) + 1))
        ax.set_xticklabels(stages)
        ax.set_ylabel("wall time [ms]")
        return _save(fig, path)
