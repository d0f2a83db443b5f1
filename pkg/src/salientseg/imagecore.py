"""Grayscale images, integral images and the box/Haar filter primitives.

All box sums are taken on rectangles clipped to the image, which is the same
as zero padding outside the frame.  Accumulation is always float64.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from pathlib import Path

import numpy as np


class ImageError(ValueError):
    """Base class for raster I/O problems."""


class PgmHeaderError(ImageError):
    pass


class PgmTruncatedError(ImageError):
    pass


class PgmMaxvalError(ImageError):
    pass


SUPPORTED_MAXVALS = (255, 65535)


@dataclass(frozen=True)
class GrayImage:
    """Row-major single-channel image with intensities in [0, 1]."""

    data: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.data, dtype=np.float64)
        if arr.ndim != 2 or arr.shape[0] < 1 or arr.shape[1] < 1:
            raise ValueError(f"expected a non-empty 2-D array, got shape {arr.shape}")
        if not np.all(np.isfinite(arr)) or arr.min() < 0.0 or arr.max() > 1.0:
            raise ValueError("intensities must lie in [0, 1]")
        arr = arr.copy()
        arr.flags.writeable = False
        object.__setattr__(self, "data", arr)

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def height(self) -> int:
        return self.data.shape[0]


@dataclass(frozen=True)
class Rect:
    """Inclusive pixel bounds."""

    x0: int
    y0: int
    x1: int
    y1: int


class IntegralImage:
    """Summed-area table: ``table[y, x]`` is the sum of ``data[:y+1, :x+1]``.

    Accepts any 2-D float array, not only [0, 1] images, so that filter
    code can be checked on arbitrary signals (offset or scaled copies).
    """

    def __init__(self, data: np.ndarray):
        data = np.asarray(data, dtype=np.float64)
        if data.ndim != 2:
            raise ValueError("integral image needs 2-D data")
        self.height, self.width = data.shape
        padded = np.zeros((self.height + 1, self.width + 1), dtype=np.float64)
        np.cumsum(np.cumsum(data, axis=0), axis=1, out=padded[1:, 1:])
        padded.flags.writeable = False
        self._padded = padded

    @property
    def table(self) -> np.ndarray:
        return self._padded[1:, 1:]

    @property
    def mass(self) -> float:
        return float(self._padded[-1, -1])

    def sums(self, x0, y0, x1, y1) -> np.ndarray:
        """Vectorized clipped box sums over inclusive bounds (broadcasting)."""
        x0 = np.clip(np.asarray(x0), 0, self.width)
        y0 = np.clip(np.asarray(y0), 0, self.height)
        x1 = np.clip(np.asarray(x1) + 1, 0, self.width)
        y1 = np.clip(np.asarray(y1) + 1, 0, self.height)
        # empty after clipping -> force a zero-area box
        x1 = np.maximum(x1, x0)
        y1 = np.maximum(y1, y0)
        s = self._padded
        return s[y1, x1] - s[y0, x1] - s[y1, x0] + s[y0, x0]


def integral(img: GrayImage | np.ndarray) -> IntegralImage:
    data = img.data if isinstance(img, GrayImage) else img
    return IntegralImage(data)


def box_sum(ii: IntegralImage, r: Rect) -> float:
    """Sum of the pixels inside ``r``; portions outside the image count as 0."""
    return float(ii.sums(r.x0, r.y0, r.x1, r.y1))


def _check_haar_size(size: int) -> int:
    size = int(size)
    if size < 2 or size % 2:
        raise ValueError(f"Haar wavelet size must be even and >= 2, got {size}")
    return size


def haar_x(ii: IntegralImage, cx, cy, size: int):
    """Right half minus left half of the ``size`` x ``size`` window at (cx, cy).

    The window spans columns ``cx - size/2 .. cx + size/2 - 1``.  ``cx`` and
    ``cy`` may be integer arrays, in which case an array is returned.
    """
    h = _check_haar_size(size) // 2
    cx = np.asarray(cx)
    cy = np.asarray(cy)
    right = ii.sums(cx, cy - h, cx + h - 1, cy + h - 1)
    left = ii.sums(cx - h, cy - h, cx - 1, cy + h - 1)
    out = right - left
    return float(out) if out.ndim == 0 else out


def haar_y(ii: IntegralImage, cx, cy, size: int):
    """Bottom half minus top half (image y grows downwards)."""
    h = _check_haar_size(size) // 2
    cx = np.asarray(cx)
    cy = np.asarray(cy)
    bottom = ii.sums(cx - h, cy, cx + h - 1, cy + h - 1)
    top = ii.sums(cx - h, cy - h, cx + h - 1, cy - 1)
    out = bottom - top
    return float(out) if out.ndim == 0 else out


# --------------------------------------------------------------------------
# PGM / PPM
# --------------------------------------------------------------------------

_TOKEN = re.compile(rb"\s*(?:#[^\n]*\n\s*)*(\S+)")


def _read_header(buf: bytes) -> tuple[bytes, int, int, int, int]:
    pos = 0
    tokens = []
    for _ in range(4):
        m = _TOKEN.match(buf, pos)
        if m is None:
            raise PgmHeaderError("incomplete PGM header")
        tokens.append(m.group(1))
        pos = m.end()
    magic = tokens[0]
    if magic not in (b"P2", b"P5"):
        raise PgmHeaderError(f"unsupported magic number {magic!r}")
    try:
        width, height, maxval = (int(t) for t in tokens[1:])
    except ValueError as exc:
        raise PgmHeaderError("non-integer field in PGM header") from exc
    if width < 1 or height < 1:
        raise PgmHeaderError(f"bad dimensions {width}x{height}")
    if maxval not in SUPPORTED_MAXVALS:
        raise PgmMaxvalError(f"maxval {maxval} not in {SUPPORTED_MAXVALS}")
    if magic == b"P5":
        # exactly one whitespace byte separates header from raster
        if pos >= len(buf) or not buf[pos:pos + 1].isspace():
            raise PgmTruncatedError("missing raster after header")
        pos += 1
    return magic, width, height, maxval, pos


def read_pgm_raw(path: str | Path) -> tuple[np.ndarray, int]:
    """Return the integer raster and its maxval."""
    buf = Path(path).read_bytes()
    magic, width, height, maxval, pos = _read_header(buf)
    n = width * height
    if magic == b"P5":
        dtype = np.dtype(">u2") if maxval > 255 else np.dtype("u1")
        payload = buf[pos:]
        if len(payload) < n * dtype.itemsize:
            raise PgmTruncatedError(
                f"expected {n * dtype.itemsize} raster bytes, found {len(payload)}")
        values = np.frombuffer(payload, dtype=dtype, count=n).astype(np.int64)
    else:
        fields = buf[pos:].split()
        if len(fields) < n:
            raise PgmTruncatedError(f"expected {n} samples, found {len(fields)}")
        try:
            values = np.array([int(f) for f in fields[:n]], dtype=np.int64)
        except ValueError as exc:
            raise PgmHeaderError("non-integer sample in P2 raster") from exc
    if values.min(initial=0) < 0 or values.max(initial=0) > maxval:
        raise PgmMaxvalError("sample exceeds maxval")
    return values.reshape(height, width), maxval


def load_pgm(path: str | Path) -> GrayImage:
    values, maxval = read_pgm_raw(path)
    return GrayImage(values / float(maxval))


def write_pgm(path: str | Path, img: GrayImage | np.ndarray) -> None:
    """Write a binary 8-bit PGM, mapping [0, 1] to 0..255."""
    data = img.data if isinstance(img, GrayImage) else np.asarray(img, dtype=np.float64)
    raster = np.clip(np.rint(data * 255.0), 0, 255).astype(np.uint8)
    _write_raw(path, b"P5", raster)


def write_label_pgm(path: str | Path, labels: np.ndarray) -> None:
    """Write small integer labels verbatim (maxval 255)."""
    labels = np.asarray(labels)
    if labels.min(initial=0) < 0 or labels.max(initial=0) > 255:
        raise ValueError("label values must fit in one byte")
    _write_raw(path, b"P5", labels.astype(np.uint8))


def read_label_pgm(path: str | Path) -> np.ndarray:
    values, _ = read_pgm_raw(path)
    return values.astype(np.int64)


def write_ppm(path: str | Path, rgb: np.ndarray) -> None:
    rgb = np.asarray(rgb, dtype=np.uint8)
    if rgb.ndim != 3 or rgb.shape[2] != 3:
        raise ValueError("PPM needs an (h, w, 3) array")
    h, w, _ = rgb.shape
    Path(path).write_bytes(b"P6\n%d %d\n255\n" % (w, h) + rgb.tobytes())


def _write_raw(path, magic: bytes, raster: np.ndarray) -> None:
    h, w = raster.shape
    Path(path).write_bytes(magic + b"\n%d %d\n255\n" % (w, h) + raster.tobytes())
