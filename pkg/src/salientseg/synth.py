"""Procedural three-class texture mosaics with exact label maps.

Class 1 (grass) is an oriented grating, class 2 (trees) blob noise, class 3
(road) a smooth gradient with streaky speckle.  Regions are bands with wavy
borders; each band's mean extent equals its requested fraction.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy import ndimage


@dataclass(frozen=True)
class GratingTexture:
    frequency: float = 0.065  # cycles per pixel
    angle: float = 0.5  # radians
    aspect: float = 0.5  # frequency ratio across the stripes
    contrast: float = 0.35


@dataclass(frozen=True)
class BlobTexture:
    density: float = 0.02  # blob centres per pixel
    size: float = 2.6  # blob sigma, pixels
    contrast: float = 0.45


@dataclass(frozen=True)
class GradientTexture:
    slope: float = 0.0015  # intensity per pixel
    angle: float = 1.2
    speckle: float = 0.35
    speckle_blur: float = 1.5
    streak: float = 3.0  # along-track blur / across-track blur
    lowfreq: float = 0.12


@dataclass(frozen=True)
class MosaicSpec:
    width: int = 256
    height: int = 256
    fractions: tuple[float, float, float] = (1 / 3, 1 / 3, 1 / 3)  # classes 1, 2, 3
    order: tuple[int, int, int] = (2, 1, 3)  # band order along the split axis
    vertical_split: bool = True  # bands stacked top to bottom
    wave_amplitude: float = 10.0
    wave_cycles: int = 2
    grass: GratingTexture = field(default_factory=GratingTexture)
    trees: BlobTexture = field(default_factory=BlobTexture)
    road: GradientTexture = field(default_factory=GradientTexture)
    noise: float = 0.02
    seed: int = 0

    def __post_init__(self):
        if self.width < 16 or self.height < 16:
            raise ValueError("mosaic must be at least 16x16")
        if sorted(self.order) != [1, 2, 3]:
            raise ValueError("order must be a permutation of (1, 2, 3)")
        fr = np.asarray(self.fractions, dtype=np.float64)
        if fr.shape != (3,) or abs(fr.sum() - 1.0) > 1e-9 or fr.min() < 0.1:
            raise ValueError("fractions must be three values >= 0.1 summing to 1")
        extent = self.height if self.vertical_split else self.width
        if self.wave_amplitude < 0 or self.wave_amplitude >= 0.5 * fr.min() * extent:
            raise ValueError("wave amplitude too large for the narrowest band")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "MosaicSpec":
        d = dict(d)
        d["grass"] = GratingTexture(**d.get("grass", {}))
        d["trees"] = BlobTexture(**d.get("trees", {}))
        d["road"] = GradientTexture(**d.get("road", {}))
        for k in ("fractions", "order"):
            if k in d:
                d[k] = tuple(d[k])
        return cls(**d)


def layout(spec: MosaicSpec, rng: np.random.Generator) -> np.ndarray:
    """Label map with values in {1, 2, 3}."""
    h, w = spec.height, spec.width
    along, across = (w, h) if spec.vertical_split else (h, w)
    u = np.arange(along) + 0.5
    frac = np.array([spec.fractions[c - 1] for c in spec.order])
    bounds = np.cumsum(frac)[:-1] * across
    coord = np.arange(across)[:, None] + 0.5
    band = np.zeros((across, along), dtype=np.int64)
    for b in bounds:
        phase = rng.uniform(0, 2 * math.pi)
        edge = b + spec.wave_amplitude * np.sin(2 * math.pi * spec.wave_cycles * u / along + phase)
        band += (coord >= edge[None, :]).astype(np.int64)
    labels = np.asarray(spec.order)[band]
    return labels if spec.vertical_split else labels.T


def grating(t: GratingTexture, h: int, w: int, rng: np.random.Generator) -> np.ndarray:
    y, x = np.mgrid[0:h, 0:w].astype(np.float64)
    u = x * math.cos(t.angle) + y * math.sin(t.angle)
    v = -x * math.sin(t.angle) + y * math.cos(t.angle)
    ph = rng.uniform(0, 2 * math.pi, 2)
    pattern = np.sin(2 * math.pi * t.frequency * u + ph[0]) * np.sin(2 * math.pi * t.frequency * t.aspect * v + ph[1])
    return 0.5 + t.contrast * pattern


def blobs(t: BlobTexture, h: int, w: int, rng: np.random.Generator) -> np.ndarray:
    impulses = np.zeros((h, w))
    n = rng.poisson(t.density * h * w)
    ys, xs = rng.integers(0, h, n), rng.integers(0, w, n)
    np.add.at(impulses, (ys, xs), rng.choice([-1.0, 1.0], n))
    field_ = ndimage.gaussian_filter(impulses, t.size, mode="wrap")
    field_ /= max(np.abs(field_).max(), 1e-12)
    return 0.5 + t.contrast * field_


def gradient(t: GradientTexture, h: int, w: int, rng: np.random.Generator) -> np.ndarray:
    y, x = np.mgrid[0:h, 0:w].astype(np.float64)
    ramp = t.slope * (x * math.cos(t.angle) + y * math.sin(t.angle))
    ramp -= ramp.mean()
    low = ndimage.gaussian_filter(rng.standard_normal((h, w)), 12.0, mode="wrap")
    low /= max(np.abs(low).max(), 1e-12)
    # streaks run along x, like ruts and gravel tracks
    speck = ndimage.gaussian_filter(rng.standard_normal((h, w)),
                                    (t.speckle_blur, t.speckle_blur * t.streak), mode="wrap")
    speck /= max(speck.std(), 1e-12)
    return 0.5 + ramp + t.lowfreq * low + 0.1 * t.speckle * speck


def render(spec: MosaicSpec, rng: np.random.Generator | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Image in [0, 1] and its label map."""
    rng = np.random.default_rng(spec.seed) if rng is None else rng
    h, w = spec.height, spec.width
    labels = layout(spec, rng)
    layers = {
        1: grating(spec.grass, h, w, rng),
        2: blobs(spec.trees, h, w, rng),
        3: gradient(spec.road, h, w, rng),
    }
    img = np.zeros((h, w))
    for c, tex in layers.items():
        img[labels == c] = tex[labels == c]
    img += spec.noise * rng.standard_normal((h, w))
    return np.clip(img, 0.0, 1.0), labels


def random_spec(seed: int, width: int = 256, height: int = 256) -> MosaicSpec:
    """A mosaic with randomized layout and mildly jittered textures."""
    rng = np.random.default_rng(seed)
    fr = rng.dirichlet([6.0, 6.0, 6.0])
    fr = 0.15 + 0.55 * fr  # keep every class well above 10 %
    fr /= fr.sum()
    vertical = bool(rng.integers(0, 2))
    extent = height if vertical else width
    amp = float(min(12.0, 0.2 * fr.min() * extent))
    return MosaicSpec(
        width=width,
        height=height,
        fractions=tuple(float(f) for f in fr),
        order=tuple(int(c) for c in rng.permutation([1, 2, 3])),
        vertical_split=vertical,
        wave_amplitude=amp,
        wave_cycles=int(rng.integers(1, 4)),
        grass=GratingTexture(frequency=float(rng.uniform(0.055, 0.075)), angle=float(rng.uniform(0.3, 0.7)),
                             aspect=float(rng.uniform(0.45, 0.55)), contrast=float(rng.uniform(0.3, 0.4))),
        trees=BlobTexture(density=float(rng.uniform(0.015, 0.025)), size=float(rng.uniform(2.3, 2.9)),
                          contrast=float(rng.uniform(0.4, 0.5))),
        road=GradientTexture(slope=float(rng.uniform(0.001, 0.002)), angle=float(rng.uniform(0, math.pi)),
                             speckle=float(rng.uniform(0.3, 0.4))),
        noise=0.02,
        seed=int(seed),
    )


def class_fractions(labels: np.ndarray) -> np.ndarray:
    return np.array([np.mean(labels == c) for c in (1, 2, 3)])
