"""Report figures.  Everything renders off-screen to files."""

from __future__ import annotations

import math
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .segment import CLASS_COLOURS  # noqa: E402
from .texmodel import CLASS_NAMES  # noqa: E402

GOLDEN = (math.sqrt(5.0) - 1.0) / 2.0
RC = {
    "figure.dpi": 110,
    "savefig.dpi": 150,
    "savefig.bbox": "tight",
    "font.size": 9,
    "axes.labelsize": 9,
    "axes.titlesize": 10,
    "legend.fontsize": 8,
    "legend.frameon": False,
    "axes.spines.top": False,
    "axes.spines.right": False,
}


def _colour(c: int) -> np.ndarray:
    return CLASS_COLOURS[c] / 255.0


def figure(width: float = 5.0, height: float | None = None, **kw):
    with plt.rc_context(RC):
        return plt.subplots(figsize=(width, height or width * GOLDEN), **kw)


def save(fig, path: str | Path) -> Path:
    path = Path(path)
    with plt.rc_context(RC):
        fig.savefig(path)
    plt.close(fig)
    return path


def pca_scatter(coords: np.ndarray, labels: np.ndarray, explained: np.ndarray, path: str | Path) -> Path:
    """Training descriptors on their first two principal components."""
    fig, ax = figure(4.5, 4.0)
    for c in (1, 2, 3):
        sel = labels == c
        ax.scatter(coords[sel, 0], coords[sel, 1], s=4, alpha=0.5, color=_colour(c), label=CLASS_NAMES[c])
    ax.set_xlabel(f"PC 1 ({100 * explained[0]:.1f} %)")
    ax.set_ylabel(f"PC 2 ({100 * explained[1]:.1f} %)")
    ax.legend(markerscale=3)
    return save(fig, path)


def loss_curve(losses, path: str | Path, title: str = "") -> Path:
    fig, ax = figure()
    ax.semilogy(np.arange(len(losses)), losses, lw=1.0, color="k")
    ax.set_xlabel("epoch")
    ax.set_ylabel("summed squared error")
    if title:
        ax.set_title(title)
    return save(fig, path)


def segmentation_overlay(image: np.ndarray, classes: np.ndarray, path: str | Path,
                         points: np.ndarray | None = None, alpha: float = 0.4) -> Path:
    """Class colours blended over the grey image; class 0 pixels stay grey."""
    grey = np.repeat(np.asarray(image, dtype=np.float64)[..., None], 3, axis=2)
    tint = CLASS_COLOURS[classes] / 255.0
    known = (classes > 0)[..., None]
    rgb = np.where(known, (1 - alpha) * grey + alpha * tint, grey)
    fig, ax = figure(4.0, 4.0 * image.shape[0] / image.shape[1])
    ax.imshow(rgb, interpolation="nearest")
    if points is not None and len(points):
        ax.plot(points[:, 0], points[:, 1], "+", ms=3, color="yellow")
    ax.set_axis_off()
    return save(fig, path)


def bench_chart(rows: list[dict], path: str | Path) -> Path:
    """Mean inlier ratio per detector variant."""
    names = list(dict.fromkeys(r["impl"] for r in rows))
    means = [np.mean([r["ratio"] for r in rows if r["impl"] == n]) for n in names]
    fig, ax = figure(1.2 + 0.8 * len(names), 3.0)
    ax.bar(names, means, color="0.4")
    ax.set_ylabel("inliers / detected")
    ax.set_ylim(0, max(1.0, max(means)))
    return save(fig, path)


def track_plot(frames: list[int], measured: np.ndarray, predicted: np.ndarray, path: str | Path) -> Path:
    """Measured camera centres and the one-step prediction error."""
    fig, (ax0, ax1) = figure(7.0, 3.0, ncols=2)
    ax0.plot(measured[:, 0], measured[:, 2], "o-", ms=3, color="k", label="measured")
    ok = np.all(np.isfinite(predicted), axis=1)
    ax0.plot(predicted[ok, 0], predicted[ok, 2], "x", ms=4, color="C3", label="predicted")
    ax0.set_xlabel("x")
    ax0.set_ylabel("z")
    ax0.legend()
    err = np.linalg.norm(predicted - measured, axis=1)
    ax1.plot(np.asarray(frames)[ok], err[ok], "o-", ms=3, color="C3")
    ax1.set_xlabel("frame")
    ax1.set_ylabel("prediction error")
    return save(fig, path)


def error_boxplot(table: dict[str, list[float]], path: str | Path) -> Path:
    fig, ax = figure(1.5 + 1.0 * len(table), 3.0)
    ax.boxplot([100 * np.asarray(v) for v in table.values()])
    ax.set_xticks(range(1, len(table) + 1), list(table))
    ax.set_ylabel("segmentation error (%)")
    return save(fig, path)
