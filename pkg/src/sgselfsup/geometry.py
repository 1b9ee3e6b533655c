"""Axis-aligned bounding-box primitives.

Boxes use image coordinates: ``(x, y)`` is the top-left corner and ``y``
grows downward.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


_BELOW_ONE = float(np.nextafter(1.0, 0.0))


class ValidationError(ValueError):
    """Raised when a geometric or annotation invariant is violated."""


@dataclass(frozen=True)
class BoundingBox:
    x: float
    y: float
    w: float
    h: float

    def __post_init__(self):
        for name in ("x", "y", "w", "h"):
            v = getattr(self, name)
            if not math.isfinite(v):
                raise ValidationError(f"box field {name} is not finite: {v!r}")
        if self.w <= 0 or self.h <= 0:
            raise ValidationError(f"degenerate box: w={self.w}, h={self.h}")
        if self.x < 0 or self.y < 0:
            raise ValidationError(f"box origin outside image: x={self.x}, y={self.y}")

    @property
    def x2(self) -> float:
        return self.x + self.w

    @property
    def y2(self) -> float:
        return self.y + self.h

    @property
    def area(self) -> float:
        return self.w * self.h

    def as_array(self) -> np.ndarray:
        return np.array([self.x, self.y, self.w, self.h], dtype=np.float64)

    def contains(self, other: "BoundingBox") -> bool:
        return (self.x <= other.x and self.y <= other.y
                and other.x2 <= self.x2 and other.y2 <= self.y2)


def iou(b1: BoundingBox, b2: BoundingBox) -> float:
    iw = min(b1.x2, b2.x2) - max(b1.x, b2.x)
    ih = min(b1.y2, b2.y2) - max(b1.y, b2.y)
    if iw <= 0 or ih <= 0:
        return 0.0
    if b1 == b2:
        return 1.0
    inter = iw * ih
    # rounding must not report a perfect match for distinct boxes
    return min(inter / (b1.area + b2.area - inter), _BELOW_ONE)


def union_box(b1: BoundingBox, b2: BoundingBox) -> BoundingBox:
    """Tightest box enclosing both inputs."""
    # returning the container avoids re-deriving w, h through x2 - x
    if b1.contains(b2):
        return b1
    if b2.contains(b1):
        return b2
    x = min(b1.x, b2.x)
    y = min(b1.y, b2.y)
    return BoundingBox(x, y, max(b1.x2, b2.x2) - x, max(b1.y2, b2.y2) - y)


def centroid(b: BoundingBox) -> tuple[float, float]:
    return (b.x + b.w / 2, b.y + b.h / 2)


def centroid_distance(b1: BoundingBox, b2: BoundingBox) -> float:
    (x1, y1), (x2, y2) = centroid(b1), centroid(b2)
    return math.hypot(x1 - x2, y1 - y2)


# Vectorized variants over arrays of shape (n, 4) in (x, y, w, h) form.

def iou_xywh(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    iw = np.minimum(a[..., 0] + a[..., 2], b[..., 0] + b[..., 2]) - np.maximum(a[..., 0], b[..., 0])
    ih = np.minimum(a[..., 1] + a[..., 3], b[..., 1] + b[..., 3]) - np.maximum(a[..., 1], b[..., 1])
    inter = np.clip(iw, 0, None) * np.clip(ih, 0, None)
    union = a[..., 2] * a[..., 3] + b[..., 2] * b[..., 3] - inter
    out = np.minimum(inter / union, _BELOW_ONE)
    same = np.all(a == b, axis=-1)
    return np.where(same, 1.0, out)


def union_xywh(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    x = np.minimum(a[..., 0], b[..., 0])
    y = np.minimum(a[..., 1], b[..., 1])
    x2 = np.maximum(a[..., 0] + a[..., 2], b[..., 0] + b[..., 2])
    y2 = np.maximum(a[..., 1] + a[..., 3], b[..., 1] + b[..., 3])
    return np.stack([x, y, x2 - x, y2 - y], axis=-1)


def centroids_xywh(a: np.ndarray) -> np.ndarray:
    return np.stack([a[..., 0] + a[..., 2] / 2, a[..., 1] + a[..., 3] / 2], axis=-1)
