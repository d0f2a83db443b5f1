"""Labelled training sets and their separability statistics."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree
from scipy.spatial.distance import cdist

from .surf import DESCRIPTOR_SIZE, Feature, descriptor_matrix, labels_of

CLASSES = (1, 2, 3)
CLASS_NAMES = {0: "unknown", 1: "grass", 2: "trees", 3: "road"}


class TrainingSetError(ValueError):
    pass


@dataclass
class TrainingSet:
    """Features carrying a class label in {1, 2, 3}."""

    features: list[Feature] = field(default_factory=list)

    def __post_init__(self):
        bad = [f.label for f in self.features if f.label not in CLASSES]
        if bad:
            raise TrainingSetError(f"training features must be labelled 1..3, got {sorted(set(bad))}")

    def __len__(self):
        return len(self.features)

    @property
    def descriptors(self) -> np.ndarray:
        return descriptor_matrix(self.features)

    @property
    def labels(self) -> np.ndarray:
        return labels_of(self.features)

    def counts(self) -> dict[int, int]:
        lab = self.labels
        return {c: int(np.sum(lab == c)) for c in CLASSES}

    def of_class(self, c: int) -> np.ndarray:
        return self.descriptors[self.labels == c].reshape(-1, DESCRIPTOR_SIZE)

    def subset(self, mask) -> "TrainingSet":
        return TrainingSet([f for f, keep in zip(self.features, mask) if keep])

    @classmethod
    def merge(cls, sets) -> "TrainingSet":
        return cls([f for ts in sets for f in ts.features])


def validate_label_map(labels: np.ndarray) -> np.ndarray:
    labels = np.asarray(labels)
    if labels.ndim != 2:
        raise ValueError("label map must be 2-D")
    if labels.size and (labels.min() < 0 or labels.max() > 3):
        raise ValueError("label map values must lie in {0, 1, 2, 3}")
    return labels.astype(np.int64)


def label_features(features: list[Feature], labels: np.ndarray,
                   image_shape: tuple[int, int] | None = None) -> TrainingSet:
    """Attach the map label under each feature; features on class 0 are dropped.

    ``image_shape`` is the (height, width) of the frame the features came
    from; a label map of another size is rejected.
    """
    labels = validate_label_map(labels)
    if image_shape is not None and tuple(image_shape) != labels.shape:
        raise ValueError(f"label map shape {labels.shape} != image shape {tuple(image_shape)}")
    h, w = labels.shape
    out = []
    seen = set()
    for f in features:
        x, y = int(round(f.point.x)), int(round(f.point.y))
        if not (0 <= x < w and 0 <= y < h):
            raise ValueError(f"feature at ({x}, {y}) lies outside the {w}x{h} label map")
        lab = int(labels[y, x])
        if lab == 0:
            continue
        key = (f.point.x, f.point.y, f.point.scale)
        if key in seen:
            raise TrainingSetError(f"duplicate feature {key}")
        seen.add(key)
        out.append(Feature(f.point, f.desc, lab, f.membership))
    return TrainingSet(out)


def knn_mean_distance(desc: np.ndarray, k: int) -> np.ndarray:
    """Mean distance from every row to its ``k`` nearest other rows."""
    dist, _ = cKDTree(desc).query(desc, k=k + 1)
    # column 0 is the point itself (or an exact duplicate, also at distance 0)
    return dist[:, 1:].mean(axis=1)


def filter_isolated(ts: TrainingSet, k: int = 5, q: float = 0.95) -> TrainingSet:
    """Drop features lying far from the rest of their own class.

    A feature is removed when its mean descriptor distance to its ``k``
    nearest same-class neighbours exceeds the ``q``-quantile of that
    statistic within the class.
    """
    if not 0.0 < q <= 1.0:
        raise ValueError("quantile must lie in (0, 1]")
    keep = np.ones(len(ts), dtype=bool)
    desc, lab = ts.descriptors, ts.labels
    for c in CLASSES:
        idx = np.flatnonzero(lab == c)
        if idx.size == 0:
            continue
        if idx.size <= k:
            raise TrainingSetError(f"class {c} has {idx.size} features, need more than k={k}")
        stat = knn_mean_distance(desc[idx], k)
        keep[idx[stat > np.quantile(stat, q)]] = False
    return ts.subset(keep)


def _knn_indices(desc: np.ndarray, k: int) -> np.ndarray:
    _, nbr = cKDTree(desc).query(desc, k=k + 1)
    out = np.empty((len(desc), k), dtype=np.int64)
    for i, row in enumerate(nbr):
        others = row[row != i]
        out[i] = others[:k]
    return out


def split_dense(ts: TrainingSet, k: int = 3) -> tuple[TrainingSet, TrainingSet]:
    """Partition into (dense, non-dense): dense features have ``k`` same-class nearest neighbours."""
    if len(ts) <= k:
        raise TrainingSetError(f"need more than k={k} features")
    lab = ts.labels
    nbr = _knn_indices(ts.descriptors, k)
    dense = np.all(lab[nbr] == lab[:, None], axis=1)
    return ts.subset(dense), ts.subset(~dense)


def variability(x: np.ndarray, y: np.ndarray, chunk: int = 2048) -> float:
    """Mean Euclidean distance over all descriptor pairs of two sets.

    When ``x`` and ``y`` are the same set the zero self-pairs are included.
    The pair distances are summed with correct rounding, so the result is
    exactly symmetric in its arguments.
    """
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    y = np.atleast_2d(np.asarray(y, dtype=np.float64))
    if x.shape[0] == 0 or y.shape[0] == 0:
        raise TrainingSetError("variability of an empty feature set")
    chunks = (cdist(x[s:s + chunk], y).ravel() for s in range(0, x.shape[0], chunk))
    total = math.fsum(v for c in chunks for v in c.tolist())
    return total / (x.shape[0] * y.shape[0])


def variability_matrix(ts: TrainingSet) -> np.ndarray:
    sets = [ts.of_class(c) for c in CLASSES]
    for c, s in zip(CLASSES, sets):
        if len(s) == 0:
            raise TrainingSetError(f"class {c} ({CLASS_NAMES[c]}) is empty")
    m = np.zeros((3, 3))
    for a in range(3):
        for b in range(a, 3):
            m[a, b] = m[b, a] = variability(sets[a], sets[b])
    return m


def pca2(desc: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Project onto the two leading principal axes.

    Returns the ``(n, 2)`` coordinates and the fraction of total variance
    carried by each axis.
    """
    desc = np.asarray(desc, dtype=np.float64)
    if desc.shape[0] < 3:
        raise TrainingSetError("PCA needs at least three features")
    centred = desc - desc.mean(axis=0)
    cov = centred.T @ centred / (desc.shape[0] - 1)
    evals, evecs = np.linalg.eigh(cov)
    total = evals.sum()
    if total <= 0.0:
        raise TrainingSetError("all features identical; PCA is undefined")
    order = np.argsort(evals)[::-1][:2]
    axes = evecs[:, order]
    # fix the sign so the output is reproducible
    flip = np.sign(axes[np.argmax(np.abs(axes), axis=0), [0, 1]])
    axes = axes * flip
    return centred @ axes, np.clip(evals[order], 0.0, None) / total
