"""Axis-aligned bounding-box algebra.

A box is the half-open region [x1, x2) x [y1, y2) in real pixel
coordinates, so an integer-coordinate box covers exactly
(x2 - x1) * (y2 - y1) pixels and two boxes that merely touch along an
edge do not intersect.  Degenerate boxes are rejected at construction.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

__all__ = [
    "Box",
    "area",
    "intersection_area",
    "iou",
    "ioa",
    "contains",
    "box_array",
    "areas",
    "intersection_areas",
    "iou_many",
    "ioa_many",
]


@dataclass(frozen=True)
class Box:
    x1: float
    y1: float
    x2: float
    y2: float

    def __post_init__(self):
        for name in ("x1", "y1", "x2", "y2"):
            v = getattr(self, name)
            if not math.isfinite(v):
                raise ValueError(f"box coordinate {name}={v!r} is not finite")
        if not (self.x1 < self.x2 and self.y1 < self.y2):
            raise ValueError(
                f"box must have positive extent, got "
                f"({self.x1}, {self.y1}, {self.x2}, {self.y2})"
            )

    def as_tuple(self) -> tuple[float, float, float, float]:
        return (self.x1, self.y1, self.x2, self.y2)

    @classmethod
    def from_sequence(cls, seq) -> "Box":
        x1, y1, x2, y2 = (float(v) for v in seq)
        return cls(x1, y1, x2, y2)


def area(b: Box) -> float:
    """Area in pixels^2; strictly positive by the Box invariant."""
    return (b.x2 - b.x1) * (b.y2 - b.y1)


def intersection_area(a: Box, b: Box) -> float:
    w = min(a.x2, b.x2) - max(a.x1, b.x1)
    h = min(a.y2, b.y2) - max(a.y1, b.y1)
    if w <= 0.0 or h <= 0.0:
        return 0.0
    return w * h


def iou(a: Box, b: Box) -> float:
    """Intersection-over-union in [0, 1]; symmetric; 0 iff disjoint interiors."""
    inter = intersection_area(a, b)
    if inter == 0.0:
        return 0.0
    return inter / (area(a) + area(b) - inter)


def ioa(a: Box, b: Box) -> float:
    """Intersection over the area of ``a``; equals 1 iff a lies inside b.

    Not symmetric: ioa(a, b) * area(a) == ioa(b, a) * area(b).
    """
    return intersection_area(a, b) / area(a)


def contains(inner: Box, outer: Box, tol: float = 1.0) -> bool:
    """True when at least ``tol`` of ``inner``'s area lies inside ``outer``."""
    return ioa(inner, outer) >= tol


# --- vectorized forms over (n, 4) float arrays ------------------------------

def box_array(boxes) -> np.ndarray:
    """Stack Box objects (or 4-sequences) into an (n, 4) float64 array."""
    out = np.empty((len(boxes), 4), dtype=np.float64)
    for i, b in enumerate(boxes):
        out[i] = b.as_tuple() if isinstance(b, Box) else tuple(b)
    return out


def areas(boxes: np.ndarray) -> np.ndarray:
    return (boxes[:, 2] - boxes[:, 0]) * (boxes[:, 3] - boxes[:, 1])


def intersection_areas(boxes: np.ndarray, b: Box) -> np.ndarray:
    w = np.minimum(boxes[:, 2], b.x2) - np.maximum(boxes[:, 0], b.x1)
    h = np.minimum(boxes[:, 3], b.y2) - np.maximum(boxes[:, 1], b.y1)
    return np.clip(w, 0.0, None) * np.clip(h, 0.0, None)


def iou_many(boxes: np.ndarray, b: Box) -> np.ndarray:
    """IoU of each row of ``boxes`` against ``b``."""
    inter = intersection_areas(boxes, b)
    union = areas(boxes) + area(b) - inter
    out = np.zeros(len(boxes), dtype=np.float64)
    nz = inter > 0.0
    out[nz] = inter[nz] / union[nz]
    return out


def ioa_many(boxes: np.ndarray, b: Box) -> np.ndarray:
    """IoA of each row against ``b``: |row ∩ b| / |row|."""
    return intersection_areas(boxes, b) / areas(boxes)
