"""Upright SURF: Fast-Hessian detection, grid selection and 36-d descriptors.

The descriptor is laid out as 3x3 subregions (row-major, top-left first), each
holding ``(sum dx, sum dy, sum |dx|, sum |dy|)`` of Gaussian-weighted Haar
responses sampled on a 5x5 grid.  No orientation is assigned.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import ndimage

from .imagecore import GrayImage, IntegralImage, integral

DESCRIPTOR_SIZE = 36
HESSIAN_XY_WEIGHT = 0.9
# relative norm below which a descriptor counts as a flat patch
FLAT_TOLERANCE = 1e-10


class DetectorError(ValueError):
    pass


@dataclass(frozen=True)
class DetectorParams:
    octaves: int = 2
    threshold: float = 1e-4
    grid_cell: int = 16
    max_features: int = 1500

    def __post_init__(self):
        if self.octaves < 1 or self.threshold <= 0 or self.grid_cell < 1 or self.max_features < 1:
            raise ValueError(f"detector parameters must be positive: {self}")


@dataclass(frozen=True)
class InterestPoint:
    x: int
    y: int
    scale: float
    strength: float
    sign: int  # 1 if the Laplacian (Dxx + Dyy) is non-negative
    filter_size: int = 0


@dataclass
class Feature:
    point: InterestPoint
    desc: np.ndarray
    label: int = 0
    membership: np.ndarray | None = None

    @property
    def xy(self) -> tuple[int, int]:
        return self.point.x, self.point.y


def octave_filter_sizes(octave: int) -> list[int]:
    """Filter side lengths of a zero-based octave: 9,15,21,27 / 15,27,39,51 / ..."""
    step = 6 * 2 ** octave
    return [3 + step * (i + 1) for i in range(4)]


def filter_scale(size: int) -> float:
    """Gaussian sigma approximated by a box filter of the given side length."""
    return 1.2 * size / 9.0


@dataclass
class ResponseStack:
    """Determinant-of-Hessian maps keyed by filter size."""

    width: int
    height: int
    octaves: list[list[int]]
    det: dict[int, np.ndarray] = field(default_factory=dict)
    laplacian_sign: dict[int, np.ndarray] = field(default_factory=dict)


def _hessian_at(ii: IntegralImage, size: int, xs: np.ndarray, ys: np.ndarray):
    lobe = size // 3
    half = size // 2
    mid = (lobe - 1) // 2
    wide = lobe - 1
    s = ii.sums
    dyy = s(xs - wide, ys - half, xs + wide, ys + half) - 3.0 * s(xs - wide, ys - mid, xs + wide, ys + mid)
    dxx = s(xs - half, ys - wide, xs + half, ys + wide) - 3.0 * s(xs - mid, ys - wide, xs + mid, ys + wide)
    dxy = (s(xs + 1, ys - lobe, xs + lobe, ys - 1) + s(xs - lobe, ys + 1, xs - 1, ys + lobe)
           - s(xs - lobe, ys - lobe, xs - 1, ys - 1) - s(xs + 1, ys + 1, xs + lobe, ys + lobe))
    inv_area = 1.0 / (size * size)
    dxx *= inv_area
    dyy *= inv_area
    dxy *= inv_area
    det = dxx * dyy - (HESSIAN_XY_WEIGHT * dxy) ** 2
    return det, (dxx + dyy >= 0).astype(np.int8)


def hessian_responses(ii: IntegralImage, params: DetectorParams = DetectorParams()) -> ResponseStack:
    """Dense approximated Hessian determinant for every filter of every octave."""
    octaves = [octave_filter_sizes(o) for o in range(params.octaves)]
    largest = octaves[-1][-1]
    if min(ii.width, ii.height) < largest:
        raise DetectorError(
            f"image {ii.width}x{ii.height} too small for {params.octaves} octave(s) "
            f"(largest filter {largest} px)")
    ys, xs = np.mgrid[0:ii.height, 0:ii.width]
    stack = ResponseStack(ii.width, ii.height, octaves)
    for size in sorted({s for octave in octaves for s in octave}):
        stack.det[size], stack.laplacian_sign[size] = _hessian_at(ii, size, xs, ys)
    return stack


_NEIGHBOURS = np.ones((3, 3, 3), dtype=bool)
_NEIGHBOURS[1, 1, 1] = False


def detect(responses: ResponseStack, params: DetectorParams = DetectorParams()) -> list[InterestPoint]:
    """Strict 3x3x3 scale-space maxima above the threshold, strongest first.

    Only positions where the largest filter of the triplet (and its 3x3
    neighbourhood) lies inside the image are searched, so that zero padding
    at the border cannot create maxima.
    """
    found = []
    for sizes in responses.octaves:
        if len(sizes) < 3:
            raise DetectorError("need at least three filter layers per octave")
        cube = np.stack([responses.det[s] for s in sizes])
        neighbour_max = ndimage.maximum_filter(
            cube, footprint=_NEIGHBOURS, mode="constant", cval=-np.inf)
        for layer in range(1, len(sizes) - 1):
            margin = sizes[layer + 1] // 2 + 1
            v = cube[layer]
            mask = (v > neighbour_max[layer]) & (v > params.threshold)
            mask[:margin, :] = False
            mask[-margin:, :] = False
            mask[:, :margin] = False
            mask[:, -margin:] = False
            size = sizes[layer]
            sign = responses.laplacian_sign[size]
            for y, x in zip(*np.nonzero(mask)):
                found.append(InterestPoint(int(x), int(y), filter_scale(size), float(v[y, x]),
                                           int(sign[y, x]), size))
    found.sort(key=lambda p: (-p.strength, p.filter_size, p.y, p.x))
    return found


def grid_select(points: list[InterestPoint], cell: int, width: int, height: int) -> list[InterestPoint]:
    """Keep the strongest point of every ``cell`` x ``cell`` grid square.

    Equal strengths are resolved by the smaller (y, x).  The result is
    ordered strongest first.
    """
    if cell <= 0:
        raise ValueError("grid cell must be positive")
    best: dict[tuple[int, int], InterestPoint] = {}
    for p in points:
        if not (0 <= p.x < width and 0 <= p.y < height):
            continue
        key = (p.x // cell, p.y // cell)
        cur = best.get(key)
        if cur is None or (p.strength, -p.y, -p.x) > (cur.strength, -cur.y, -cur.x):
            best[key] = p
    return sorted(best.values(), key=lambda p: (-p.strength, p.y, p.x))


# --------------------------------------------------------------------------
# descriptor
# --------------------------------------------------------------------------

_SUB = np.arange(3)
_SAMPLE = np.arange(5)
# sample offsets in units of the point scale: 12s window, 3 subregions of 4s, 5 samples each
_OFFSETS = (-6.0 + 4.0 * _SUB[:, None] + 0.8 * _SAMPLE[None, :] + 0.4).ravel()


def describe_many(ii: IntegralImage, points: list[InterestPoint]) -> np.ndarray:
    """Descriptors for many points at once, shape ``(n, 36)``."""
    n = len(points)
    if n == 0:
        return np.zeros((0, DESCRIPTOR_SIZE))
    px = np.array([p.x for p in points], dtype=np.float64)
    py = np.array([p.y for p in points], dtype=np.float64)
    scale = np.array([p.scale for p in points], dtype=np.float64)
    half = np.maximum(1, np.rint(scale)).astype(np.int64)  # wavelet side = 2 * half

    # (n, 15 rows, 15 cols) sample grid
    oy = _OFFSETS[None, :, None] * scale[:, None, None]
    ox = _OFFSETS[None, None, :] * scale[:, None, None]
    sx = np.rint(px[:, None, None] + ox).astype(np.int64)
    sy = np.rint(py[:, None, None] + oy).astype(np.int64)
    sx, sy = np.broadcast_arrays(sx, sy)
    h = half[:, None, None]
    sigma = 3.3 * scale[:, None, None]
    g = np.exp(-(ox ** 2 + oy ** 2) / (2.0 * sigma ** 2))

    s = ii.sums
    right = s(sx, sy - h, sx + h - 1, sy + h - 1)
    left = s(sx - h, sy - h, sx - 1, sy + h - 1)
    bottom = s(sx - h, sy, sx + h - 1, sy + h - 1)
    top = s(sx - h, sy - h, sx + h - 1, sy - 1)
    dx = g * (right - left)
    dy = g * (bottom - top)
    mass = np.sum(g * (np.abs(right) + np.abs(left)), axis=(1, 2))

    # fold the 15x15 grid into 3x3 subregions
    def fold(a):
        return a.reshape(n, 3, 5, 3, 5).sum(axis=(2, 4))

    desc = np.stack([fold(dx), fold(dy), fold(np.abs(dx)), fold(np.abs(dy))], axis=-1)
    desc = desc.reshape(n, DESCRIPTOR_SIZE)
    norm = np.linalg.norm(desc, axis=1)
    flat = norm <= FLAT_TOLERANCE * np.maximum(mass, np.finfo(float).tiny)
    out = np.zeros_like(desc)
    ok = ~flat
    out[ok] = desc[ok] / norm[ok, None]
    return out


def describe(ii: IntegralImage, p: InterestPoint) -> np.ndarray:
    """36-d unit descriptor of one point (all zeros for a flat patch)."""
    if not (0 <= p.x < ii.width and 0 <= p.y < ii.height):
        raise ValueError(f"point ({p.x}, {p.y}) outside the image")
    return describe_many(ii, [p])[0]


def descriptor_support(p: InterestPoint) -> int:
    """Pixel radius touched by the descriptor of ``p`` (samples plus wavelet)."""
    half = max(1, int(round(p.scale)))
    return int(math.ceil(5.6 * p.scale)) + half + 1


def extract(img: GrayImage, params: DetectorParams = DetectorParams()) -> list[Feature]:
    """Detect, keep one point per grid cell, describe.

    Points whose descriptor window would leave the frame are skipped before
    grid selection, so every extracted descriptor sees real pixels only.
    """
    ii = integral(img)
    points = [p for p in detect(hessian_responses(ii, params), params)
              if _inside(p, descriptor_support(p), img.width, img.height)]
    points = grid_select(points, params.grid_cell, img.width, img.height)[:params.max_features]
    descs = describe_many(ii, points)
    return [Feature(p, d) for p, d in zip(points, descs)]


def _inside(p: InterestPoint, margin: int, width: int, height: int) -> bool:
    return margin <= p.x < width - margin and margin <= p.y < height - margin


# --------------------------------------------------------------------------
# array views and CSV
# --------------------------------------------------------------------------

def descriptor_matrix(features: list[Feature]) -> np.ndarray:
    if not features:
        return np.zeros((0, DESCRIPTOR_SIZE))
    return np.vstack([f.desc for f in features])


def positions(features: list[Feature]) -> np.ndarray:
    return np.array([[f.point.x, f.point.y] for f in features], dtype=np.float64).reshape(-1, 2)


def labels_of(features: list[Feature]) -> np.ndarray:
    return np.array([f.label for f in features], dtype=np.int64)


CSV_HEADER = ["x", "y", "scale", "strength", "sign", "label"] + [f"d{i}" for i in range(DESCRIPTOR_SIZE)]


def _fmt(v: float) -> str:
    return format(float(v), ".17g")


def write_features_csv(path: str | Path, features: list[Feature]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(CSV_HEADER)
        for f in features:
            p = f.point
            w.writerow([p.x, p.y, _fmt(p.scale), _fmt(p.strength), p.sign, f.label]
                       + [_fmt(v) for v in f.desc])


def read_features_csv(path: str | Path) -> list[Feature]:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != CSV_HEADER:
            raise ValueError(f"{path}: unexpected feature CSV header")
        out = []
        for row in reader:
            if len(row) != len(CSV_HEADER):
                raise ValueError(f"{path}: row with {len(row)} fields")
            scale = float(row[2])
            p = InterestPoint(int(row[0]), int(row[1]), scale, float(row[3]), int(row[4]),
                              int(round(scale * 9.0 / 1.2)))
            out.append(Feature(p, np.array([float(v) for v in row[6:]]), int(row[5])))
    return out

