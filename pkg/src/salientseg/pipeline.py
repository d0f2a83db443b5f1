"""End-to-end pipelines shared by the command line and the benchmarks."""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .classify import MlpModel, NearestNeighbor, TrainResult, load_mlp, save_mlp, train_mlp
from .config import Config
from .geometry import GeometryError, inlier_ratio, ransac_f, two_view
from .imagecore import GrayImage
from .pose import PoseFilter, quat_from_matrix
from .segment import SegmentationMap, build_index, segment
from .surf import DetectorParams, Feature, descriptor_matrix, extract, positions, read_features_csv, write_features_csv
from .texmodel import TrainingSet, filter_isolated, label_features
from .tracking import Match, match, matched_points, transfer_memberships

log = logging.getLogger(__name__)

Classifier = NearestNeighbor | MlpModel


# --------------------------------------------------------------------------
# single images
# --------------------------------------------------------------------------

def extract_image(img: GrayImage, cfg: Config) -> list[Feature]:
    return extract(img, cfg.detector)


def extract_labelled(img: GrayImage, labels: np.ndarray, cfg: Config) -> TrainingSet:
    return label_features(extract_image(img, cfg), labels, (img.height, img.width))


def classify(features: list[Feature], clf: Classifier, only_missing: bool = False) -> list[Feature]:
    """Attach memberships; with ``only_missing`` features that have one keep it."""
    todo = [i for i, f in enumerate(features) if not (only_missing and f.membership is not None)]
    out = list(features)
    if not todo:
        return out
    mem = clf.memberships(descriptor_matrix([features[i] for i in todo]))
    for i, m in zip(todo, mem):
        out[i] = replace(features[i], membership=m)
    return out


def segment_features(features: list[Feature], width: int, height: int, cfg: Config) -> SegmentationMap:
    mem = np.array([f.membership for f in features], dtype=np.float64).reshape(-1, 3)
    return segment(width, height, build_index(positions(features), mem, cfg.segment.r), cfg.segment)


def segment_image(img: GrayImage, clf: Classifier, cfg: Config) -> tuple[SegmentationMap, list[Feature]]:
    feats = classify(extract_image(img, cfg), clf)
    if not feats:
        log.warning("no features detected; the class map is all 0")
    return segment_features(feats, img.width, img.height, cfg), feats


# --------------------------------------------------------------------------
# training and model files
# --------------------------------------------------------------------------

@dataclass
class Trained:
    classifier: Classifier
    filtered: TrainingSet
    result: TrainResult | None = None


def train(ts: TrainingSet, cfg: Config) -> Trained:
    """Drop isolated features, then fit the configured classifier."""
    filtered = filter_isolated(ts, cfg.filter.k, cfg.filter.quantile)
    log.info("training set: %d features, %d after isolation filter", len(ts), len(filtered))
    if cfg.classifier == "nn":
        return Trained(NearestNeighbor(filtered, cfg.nn_tau), filtered)
    tcfg = replace(cfg.train, seed=cfg.derive_seed("mlp-init", cfg.train.seed))
    result = train_mlp(filtered, tcfg)
    return Trained(result.model, filtered, result)


def save_model(path: str | Path, trained: Trained) -> None:
    """NN models are the filtered feature CSV; MLP models are JSON."""
    if isinstance(trained.classifier, NearestNeighbor):
        write_features_csv(path, trained.filtered.features)
    else:
        save_mlp(path, trained.classifier)


def load_model(path: str | Path, cfg: Config) -> Classifier:
    with open(path, "rb") as fh:
        head = fh.read(1)
    if head == b"{":
        return load_mlp(path)
    ts = TrainingSet(read_features_csv(path))
    return NearestNeighbor(ts, cfg.nn_tau)


# --------------------------------------------------------------------------
# tracking
# --------------------------------------------------------------------------

TRACK_COLUMNS = ("frame", "detected", "matched", "inliers", "ratio", "mode")
POSE_COLUMNS = ("frame", "cx", "cy", "cz", "qw", "qx", "qy", "qz",
                "pred_cx", "pred_cy", "pred_cz", "pred_error")


@dataclass
class FrameResult:
    index: int
    features: list[Feature]
    matches: list[Match]
    seg: SegmentationMap
    mode: str  # "first", "tracking" or "per-frame"
    inliers: int = 0
    ratio: float = 0.0
    centre: np.ndarray | None = None  # measured camera centre
    quaternion: np.ndarray | None = None  # camera-to-world
    predicted: np.ndarray | None = None  # centre predicted before the measurement

    def track_row(self) -> list:
        return [self.index, len(self.features), len(self.matches), self.inliers, f"{self.ratio:.6f}", self.mode]

    def pose_row(self) -> list | None:
        if self.centre is None:
            return None
        pred = self.predicted if self.predicted is not None else np.full(3, np.nan)
        err = float(np.linalg.norm(pred - self.centre)) if self.predicted is not None else np.nan
        return [self.index, *map(_g, self.centre), *map(_g, self.quaternion), *map(_g, pred), _g(err)]


def _g(v: float) -> str:
    return format(float(v), ".17g")


@dataclass
class Tracker:
    """Frame-by-frame segmentation that carries memberships along matches.

    Camera poses are chained from unit-baseline relative motions, so the
    trajectory is known up to one scale per step.
    """

    classifier: Classifier
    cfg: Config
    filter: PoseFilter = None
    frames: int = 0
    prev: list[Feature] | None = None
    R: np.ndarray = field(default_factory=lambda: np.eye(3))
    t: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        if self.filter is None:
            self.filter = PoseFilter(self.cfg.intrinsics.matrix())

    def step(self, img: GrayImage) -> FrameResult:
        k, tp = self.frames, self.cfg.track
        self.frames += 1
        if self.prev is None or not tp.enabled:
            seg, feats = segment_image(img, self.classifier, self.cfg)
            self.prev = feats
            return FrameResult(k, feats, [], seg, "first" if k == 0 else "per-frame")
        feats = extract_image(img, self.cfg)
        matches = match(self.prev, feats, tp.match_radius, tp.match_threshold)
        feats = classify(transfer_memberships(matches, self.prev, feats), self.classifier, only_missing=True)
        seg = segment_features(feats, img.width, img.height, self.cfg)
        res = FrameResult(k, feats, matches, seg, "tracking")
        try:
            p1, p2 = matched_points(matches, self.prev, feats)
            geo = two_view(p1, p2, self.cfg.intrinsics.matrix(), tp.ransac_tol, tp.ransac_confidence,
                           tp.ransac_max_iters, self.cfg.derive_seed("ransac", k))
        except GeometryError as e:
            log.info("frame %d: two-view geometry failed (%s); per-frame mode", k, e)
            res.mode = "per-frame"
        else:
            res.inliers = int(geo.inliers.sum())
            res.ratio = inlier_ratio(res.inliers, len(self.prev), len(feats))
            self._update_pose(res, geo.R, geo.t)
        self.prev = feats
        return res

    def _update_pose(self, res: FrameResult, R_rel: np.ndarray, t_rel: np.ndarray) -> None:
        self.R, self.t = R_rel @ self.R, R_rel @ self.t + t_rel
        if self.filter.initialized:
            _, R_pred, t_pred = self.filter.predict_pose(self.cfg.track.dt)
            res.predicted = -R_pred.T @ t_pred
        self.filter.update_pose(self.R, self.t)
        res.centre = -self.R.T @ self.t
        res.quaternion = quat_from_matrix(self.R.T)


def write_track_logs(track_path: str | Path, pose_path: str | Path, frames: list[FrameResult]) -> None:
    with open(track_path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(TRACK_COLUMNS)
        for fr in frames:
            w.writerow(fr.track_row())
    with open(pose_path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(POSE_COLUMNS)
        for fr in frames:
            row = fr.pose_row()
            if row is not None:
                w.writerow(row)


# --------------------------------------------------------------------------
# matching benchmark
# --------------------------------------------------------------------------

BENCH_COLUMNS = ("impl", "detected1", "detected2", "matched", "inliers", "ratio")


def bench_pair(img1: GrayImage, img2: GrayImage, name: str, detector: DetectorParams, cfg: Config,
               seed: int) -> dict:
    """Detected, matched and RANSAC-consistent feature counts for one pair.

    Degenerate samples are accepted here: a pair without motion has a whole
    family of consistent F and every correct match supports all of them.
    """
    tp = cfg.track
    f1, f2 = extract(img1, detector), extract(img2, detector)
    matches = match(f1, f2, tp.match_radius, tp.match_threshold)
    inliers = 0
    if matches:
        p1, p2 = matched_points(matches, f1, f2)
        try:
            inliers = ransac_f(p1, p2, tp.ransac_tol, tp.ransac_confidence, tp.ransac_max_iters,
                               seed, allow_degenerate=True).n_inliers
        except GeometryError as e:
            log.info("%s: no F model (%s)", name, e)
    return {"impl": name, "detected1": len(f1), "detected2": len(f2), "matched": len(matches),
            "inliers": inliers, "ratio": inlier_ratio(inliers, len(f1), len(f2))}


def write_bench_csv(path: str | Path, rows: list[dict]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, BENCH_COLUMNS)
        w.writeheader()
        for r in rows:
            w.writerow({**r, "ratio": f"{r['ratio']:.6f}"})


# --------------------------------------------------------------------------
# synthetic benchmark
# --------------------------------------------------------------------------

@dataclass
class BenchmarkResult:
    rates: dict[str, list[float]]  # e.g. "NN train" -> per-image error rates
    stats: dict[str, dict[str, float]]
    n_features: int
    n_filtered: int


def synthetic_benchmark(cfg: Config, n_train: int = 12, n_test: int = 4, size: int = 256,
                        classifiers=("nn", "mlp")) -> BenchmarkResult:
    """Train on generated mosaics, report per-image error rates on train and test.

    Mosaic ``i`` uses the same seed as ``gen-mosaic --start i`` with the
    config's root seed: training images are 0..n_train-1, test images follow.
    """
    from .segment import error_rate, summarize
    from .synth import random_spec, render
    from .config import derive_seed

    data = [render(random_spec(derive_seed(cfg.seed, "mosaic", i), size, size)) for i in range(n_train + n_test)]
    images = [(GrayImage(img), lab) for img, lab in data]
    feats = [extract_image(img, cfg) for img, _ in images]
    ts = TrainingSet.merge(label_features(f, lab, lab.shape) for f, (_, lab) in zip(feats[:n_train], images))
    rates: dict[str, list[float]] = {}
    n_filtered = 0
    for name in classifiers:
        run_cfg = replace(cfg, classifier=name)
        trained = train(ts, run_cfg)
        n_filtered = len(trained.filtered)
        for part, idx in (("train", range(n_train)), ("test", range(n_train, n_train + n_test))):
            key = f"{name.upper()} {part}"
            rates[key] = []
            for i in idx:
                img, lab = images[i]
                seg = segment_features(classify(feats[i], trained.classifier), img.width, img.height, run_cfg)
                rates[key].append(error_rate(seg, lab))
    return BenchmarkResult(rates, {k: summarize(v) for k, v in rates.items()}, len(ts), n_filtered)
