"""Binary masks and pixel <-> normalized coordinate geometry.

Conventions used everywhere in the package:

* masks are ``(H, W)`` boolean numpy arrays, row index ``j`` along the
  height and column index ``i`` along the width;
* ``x`` is the horizontal (column) coordinate, normalized by ``W``;
  ``y`` is the vertical (row) coordinate, normalized by ``H``;
* pixel ``(i, j)`` is sampled at its center, ``((i + 0.5) / W, (j + 0.5) / H)``,
  so a full-frame mask has centroid exactly ``(0.5, 0.5)``.

An all-zero mask has no centroid or extent; both functions return ``None``
so callers can branch into occlusion handling.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple, Optional

import numpy as np

from .errors import DataError


@dataclass(frozen=True)
class FrameSize:
    width: int
    height: int

    def __post_init__(self):
        if int(self.width) < 1 or int(self.height) < 1:
            raise DataError(f"frame size must be positive, got {self.width}x{self.height}")

    @classmethod
    def of(cls, array) -> "FrameSize":
        """Frame size of the trailing two axes of ``array``."""
        h, w = np.shape(array)[-2:]
        return cls(int(w), int(h))

    @property
    def shape(self) -> tuple[int, int]:
        return (self.height, self.width)


class NormalizedPoint(NamedTuple):
    x: float
    y: float


class NormalizedExtent(NamedTuple):
    w: float
    h: float


def as_mask(mask, size: Optional[FrameSize] = None) -> np.ndarray:
    """Validate and return ``mask`` as a 2-D boolean array.

    Accepts bool arrays or integer/float arrays holding only 0 and 1.
    """
    arr = np.asarray(mask)
    if arr.ndim != 2:
        raise DataError(f"mask must be 2-D, got shape {arr.shape}")
    if arr.dtype != np.bool_:
        if not np.all((arr == 0) | (arr == 1)):
            raise DataError("mask values must be 0 or 1")
        arr = arr.astype(bool)
    if size is not None and arr.shape != size.shape:
        raise DataError(f"mask shape {arr.shape} does not match frame {size.height}x{size.width}")
    return arr


def mask_area(mask) -> int:
    return int(np.count_nonzero(as_mask(mask)))


def pixel_centroid(mask) -> Optional[tuple[float, float]]:
    """Mean ``(col, row)`` pixel-center coordinate of set pixels, in pixels."""
    m = as_mask(mask)
    rows, cols = np.nonzero(m)
    if rows.size == 0:
        return None
    return float(cols.mean() + 0.5), float(rows.mean() + 0.5)


def pixel_extent(mask) -> Optional[tuple[int, int]]:
    """Tight bounding-box ``(width, height)`` in pixels (``max - min + 1``)."""
    m = as_mask(mask)
    rows, cols = np.nonzero(m)
    if rows.size == 0:
        return None
    return int(cols.max() - cols.min() + 1), int(rows.max() - rows.min() + 1)


def centroid(mask) -> Optional[NormalizedPoint]:
    """Normalized centroid of the set pixels, or ``None`` for an empty mask.

    Every set pixel contributes (including disconnected fragments).
    """
    m = as_mask(mask)
    c = pixel_centroid(m)
    if c is None:
        return None
    size = FrameSize.of(m)
    return NormalizedPoint(c[0] / size.width, c[1] / size.height)


def extent(mask) -> Optional[NormalizedExtent]:
    """Normalized bounding-box extent, or ``None`` for an empty mask."""
    m = as_mask(mask)
    e = pixel_extent(m)
    if e is None:
        return None
    size = FrameSize.of(m)
    return NormalizedExtent(e[0] / size.width, e[1] / size.height)


def pixel_centers(size: FrameSize) -> tuple[np.ndarray, np.ndarray]:
    """Normalized pixel-center coordinates along x (length W) and y (length H)."""
    cx = (np.arange(size.width, dtype=np.float64) + 0.5) / size.width
    cy = (np.arange(size.height, dtype=np.float64) + 0.5) / size.height
    return cx, cy
