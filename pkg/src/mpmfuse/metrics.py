"""Region (Jaccard) and boundary F-measure scores for mask sequences.

The boundary score is the standard tolerance-based boundary F, not the
benchmark's modified variant; reports label it as such.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from .errors import DataError
from .geometry import as_mask

BOUNDARY_KIND = "boundary-F (euclidean tolerance, 4-connected boundary)"


@dataclass(frozen=True)
class MetricReport:
    j: float
    f: float
    jf: float
    per_object: dict[int, tuple[float, float]] = field(default_factory=dict)
    tolerance: float = 0.0

    @classmethod
    def from_scores(cls, per_object: dict[int, tuple[float, float]], tolerance: float = 0.0) -> "MetricReport":
        if not per_object:
            raise DataError("no objects to report")
        j = float(np.mean([v[0] for v in per_object.values()]))
        f = float(np.mean([v[1] for v in per_object.values()]))
        return cls(j, f, (j + f) / 2, dict(per_object), tolerance)

    def to_dict(self) -> dict:
        return {
            "j": self.j,
            "f": self.f,
            "jf": self.jf,
            "boundary_measure": BOUNDARY_KIND,
            "tolerance": self.tolerance,
            "per_object": {str(k): {"j": v[0], "f": v[1], "jf": (v[0] + v[1]) / 2}
                           for k, v in sorted(self.per_object.items())},
        }


def _pair(pred, gt) -> tuple[np.ndarray, np.ndarray]:
    p, g = as_mask(pred), as_mask(gt)
    if p.shape != g.shape:
        raise DataError(f"mask shapes differ: {p.shape} vs {g.shape}")
    return p, g


def jaccard(pred, gt) -> float:
    p, g = _pair(pred, gt)
    union = np.count_nonzero(p | g)
    if union == 0:
        return 1.0
    return np.count_nonzero(p & g) / union


def boundary(mask) -> np.ndarray:
    """Set pixels with an unset 4-neighbour or lying on the frame edge."""
    m = as_mask(mask)
    padded = np.pad(m, 1, constant_values=False)
    interior = (
        padded[:-2, 1:-1] & padded[2:, 1:-1] & padded[1:-1, :-2] & padded[1:-1, 2:]
    )
    return m & ~interior


def default_tolerance(shape) -> int:
    h, w = shape
    return math.ceil(0.01 * math.hypot(h, w))


def _matched_fraction(src: np.ndarray, dst: np.ndarray, tolerance: float) -> float:
    # distance from every pixel to the nearest dst boundary pixel
    dist = ndimage.distance_transform_edt(~dst)
    return np.count_nonzero(dist[src] <= tolerance) / np.count_nonzero(src)


def boundary_f(pred, gt, tolerance: float | None = None) -> float:
    """Boundary F-measure with a Euclidean pixel tolerance.

    ``tolerance`` defaults to 1% of the frame diagonal, rounded up.
    """
    p, g = _pair(pred, gt)
    if tolerance is None:
        tolerance = default_tolerance(p.shape)
    if tolerance < 0:
        raise ValueError("tolerance must be nonnegative")
    bp, bg = boundary(p), boundary(g)
    if not bp.any() and not bg.any():
        return 1.0
    if not bp.any() or not bg.any():
        return 0.0
    precision = _matched_fraction(bp, bg, tolerance)
    recall = _matched_fraction(bg, bp, tolerance)
    if precision + recall == 0:
        return 0.0
    return 2 * precision * recall / (precision + recall)


def evaluate_sequence(preds, gts, num_objects: int | None = None, tolerance: float | None = None) -> MetricReport:
    """Score label-grid sequences ``(T, H, W)``; labels ``1..N`` are objects.

    Per object, J and F are averaged over frames; the report averages those
    over objects.
    """
    preds = np.asarray(preds)
    gts = np.asarray(gts)
    if preds.ndim != 3 or gts.ndim != 3:
        raise DataError(f"expected (T, H, W) label sequences, got {preds.shape} and {gts.shape}")
    if preds.shape[0] != gts.shape[0]:
        raise DataError(f"frame count mismatch: {preds.shape[0]} predicted vs {gts.shape[0]} ground truth")
    if preds.shape != gts.shape:
        raise DataError(f"frame size mismatch: {preds.shape[1:]} vs {gts.shape[1:]}")
    if num_objects is None:
        num_objects = int(gts.max(initial=0))
    stray = sorted(set(np.unique(preds).tolist()) - set(range(num_objects + 1)))
    if stray:
        raise DataError(f"predicted object ids {stray} not present in ground truth (1..{num_objects})")
    if tolerance is None:
        tolerance = default_tolerance(gts.shape[1:])

    per_object = {}
    for obj in range(1, num_objects + 1):
        js, fs = [], []
        for p, g in zip(preds, gts):
            js.append(jaccard(p == obj, g == obj))
            fs.append(boundary_f(p == obj, g == obj, tolerance))
        per_object[obj] = (float(np.mean(js)), float(np.mean(fs)))
    return MetricReport.from_scores(per_object, tolerance)
