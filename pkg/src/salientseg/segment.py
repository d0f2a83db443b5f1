"""Pixel-wise segmentation by Gaussian-weighted voting of feature memberships.

For pixel ``p`` and the features ``T`` strictly within radius ``r``::

    V_m(p) = 1/|T| * sum_k  m_k[m] * exp(-|p - l_k|^2 / (2 * sigma)) / (sigma * sqrt(2 pi))

Note the un-squared ``sigma`` in the exponent; ``squared_sigma=True``
switches to the textbook Gaussian.  The pixel takes ``argmax_m V_m`` if that
maximum exceeds ``t``, else class 0.  Pixels with no feature in range are 0.
"""

from __future__ import annotations

import csv
import math
from collections import defaultdict
from dataclasses import dataclass
from pathlib import Path

import numpy as np

N_CLASSES = 3
# 0 unknown, 1 grass, 2 trees, 3 road
CLASS_COLOURS = np.array([[0, 0, 0], [40, 170, 40], [30, 60, 200], [140, 20, 20]], dtype=np.uint8)


@dataclass(frozen=True)
class SegParams:
    r: float = 48.0
    sigma: float = 16.0
    t: float = 0.0
    squared_sigma: bool = False

    def __post_init__(self):
        if self.r <= 0 or self.sigma <= 0 or not 0.0 <= self.t <= 1.0:
            raise ValueError(f"invalid segmentation parameters {self}")

    def weight(self, dist2: np.ndarray) -> np.ndarray:
        denom = 2.0 * (self.sigma ** 2 if self.squared_sigma else self.sigma)
        return np.exp(-dist2 / denom) / (self.sigma * math.sqrt(2.0 * math.pi))


@dataclass
class SegmentationMap:
    classes: np.ndarray  # (h, w) ints in 0..3
    value: np.ndarray  # (h, w) max membership value, 0 where no feature is in range

    @property
    def width(self) -> int:
        return self.classes.shape[1]

    @property
    def height(self) -> int:
        return self.classes.shape[0]


class FeatureIndex:
    """Bucket grid over feature positions for radius queries."""

    def __init__(self, positions: np.ndarray, memberships: np.ndarray, cell: float):
        if cell <= 0:
            raise ValueError("bucket size must be positive")
        self.positions = np.asarray(positions, dtype=np.float64).reshape(-1, 2)
        self.memberships = np.asarray(memberships, dtype=np.float64).reshape(-1, N_CLASSES)
        if len(self.positions) != len(self.memberships):
            raise ValueError("one membership vector per feature is required")
        self.cell = float(cell)
        self.buckets: dict[tuple[int, int], list[int]] = defaultdict(list)
        for i, (x, y) in enumerate(self.positions):
            self.buckets[self._key(x, y)].append(i)

    def __len__(self):
        return len(self.positions)

    def _key(self, x, y) -> tuple[int, int]:
        return int(math.floor(x / self.cell)), int(math.floor(y / self.cell))

    def candidates(self, x0: float, y0: float, x1: float, y1: float, radius: float) -> np.ndarray:
        """Indices of features in buckets that may lie within ``radius`` of the box."""
        kx0, ky0 = self._key(x0 - radius, y0 - radius)
        kx1, ky1 = self._key(x1 + radius, y1 + radius)
        out = []
        for kx in range(kx0, kx1 + 1):
            for ky in range(ky0, ky1 + 1):
                out.extend(self.buckets.get((kx, ky), ()))
        return np.array(sorted(out), dtype=np.int64)

    def query(self, x: float, y: float, radius: float) -> np.ndarray:
        """Indices of features strictly closer than ``radius`` to (x, y), ascending."""
        cand = self.candidates(x, y, x, y, radius)
        if cand.size == 0:
            return cand
        d2 = np.sum((self.positions[cand] - (x, y)) ** 2, axis=1)
        return cand[d2 < radius * radius]


def build_index(positions: np.ndarray, memberships: np.ndarray, r: float) -> FeatureIndex:
    return FeatureIndex(positions, memberships, r)


def membership_values(width: int, height: int, index: FeatureIndex,
                      params: SegParams, block: int | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Per-pixel ``V`` of shape (h, w, 3) and the neighbour count ``|T|``."""
    block = block or max(1, int(math.ceil(index.cell)))
    values = np.zeros((height, width, N_CLASSES))
    counts = np.zeros((height, width), dtype=np.int64)
    r2 = params.r * params.r
    for y0 in range(0, height, block):
        for x0 in range(0, width, block):
            y1, x1 = min(y0 + block, height), min(x0 + block, width)
            cand = index.candidates(x0, y0, x1 - 1, y1 - 1, params.r)
            if cand.size == 0:
                continue
            ys, xs = np.mgrid[y0:y1, x0:x1]
            pix = np.stack([xs.ravel(), ys.ravel()], axis=1).astype(np.float64)
            diff = pix[:, None, :] - index.positions[cand][None, :, :]
            d2 = np.einsum("pkc,pkc->pk", diff, diff)
            inside = d2 < r2
            wgt = np.where(inside, params.weight(d2), 0.0)
            n = inside.sum(axis=1)
            acc = wgt @ index.memberships[cand]
            with np.errstate(invalid="ignore", divide="ignore"):
                v = np.where(n[:, None] > 0, acc / np.maximum(n, 1)[:, None], 0.0)
            values[y0:y1, x0:x1] = v.reshape(y1 - y0, x1 - x0, N_CLASSES)
            counts[y0:y1, x0:x1] = n.reshape(y1 - y0, x1 - x0)
    return values, counts


def segment(width: int, height: int, index: FeatureIndex, params: SegParams = SegParams()) -> SegmentationMap:
    values, counts = membership_values(width, height, index, params)
    vmax = values.max(axis=2)
    classes = np.where((counts > 0) & (vmax > params.t), values.argmax(axis=2) + 1, 0)
    return SegmentationMap(classes.astype(np.int64), np.where(counts > 0, vmax, 0.0))


# --------------------------------------------------------------------------
# evaluation
# --------------------------------------------------------------------------

def error_rate(seg: np.ndarray, truth: np.ndarray) -> float:
    """Share of labelled truth pixels that the segmentation gets wrong (0 counts as wrong)."""
    seg = np.asarray(seg.classes if isinstance(seg, SegmentationMap) else seg)
    truth = np.asarray(truth)
    if seg.shape != truth.shape:
        raise ValueError(f"segmentation shape {seg.shape} != truth shape {truth.shape}")
    labelled = truth != 0
    n = int(labelled.sum())
    if n == 0:
        raise ValueError("ground truth has no labelled pixels")
    return float(np.sum(seg[labelled] != truth[labelled])) / n


STAT_ROWS = ("mean", "std", "min", "max")


def summarize(rates) -> dict[str, float]:
    """Mean, sample standard deviation, min and max of per-image error rates."""
    rates = np.asarray(list(rates), dtype=np.float64)
    if rates.size == 0:
        raise ValueError("no error rates to summarize")
    std = float(rates.std(ddof=1)) if rates.size > 1 else 0.0
    return {"mean": float(rates.mean()), "std": std, "min": float(rates.min()), "max": float(rates.max())}


def evaluate(segs, truths) -> dict[str, float]:
    return summarize(error_rate(s, t) for s, t in zip(segs, truths, strict=True))


def write_stats_csv(path: str | Path, table: dict[str, dict[str, float]]) -> None:
    """Error-rate table, one row per classifier/set, values in percent."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["classifier", *STAT_ROWS])
        for name, stats in table.items():
            w.writerow([name, *(f"{100.0 * stats[k]:.2f}" for k in STAT_ROWS)])


def colourize(classes: np.ndarray) -> np.ndarray:
    return CLASS_COLOURS[np.asarray(classes)]
