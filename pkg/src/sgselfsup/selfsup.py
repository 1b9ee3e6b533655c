"""Auxiliary targets computed from box geometry alone.

* relative position: two bits, object right of subject / object below subject
* centroid distance divided by the image diagonal (shared by the spatial and
  the visual distance heads)
* subject/object IoU
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_array

from .data import ImageMeta
from .geometry import BoundingBox, centroid, centroid_distance, centroids_xywh, iou, iou_xywh


@dataclass(frozen=True)
class SelfSupLabels:
    relpos: tuple
    distance: float
    iou: float


def relpos_label(b_s: BoundingBox, b_o: BoundingBox) -> tuple[int, int]:
    (sx, sy), (ox, oy) = centroid(b_s), centroid(b_o)
    # ties resolve to 0
    return (int(ox > sx), int(oy > sy))


def distance_label(b_s: BoundingBox, b_o: BoundingBox, img: ImageMeta) -> float:
    return centroid_distance(b_s, b_o) / img.diagonal


def iou_label(b_s: BoundingBox, b_o: BoundingBox) -> float:
    return iou(b_s, b_o)


def labels_for_pair(b_s: BoundingBox, b_o: BoundingBox, img: ImageMeta) -> SelfSupLabels:
    return SelfSupLabels(relpos_label(b_s, b_o), distance_label(b_s, b_o, img),
                         iou_label(b_s, b_o))


def labels_xywh(sub: np.ndarray, obj: np.ndarray, image_wh: np.ndarray) -> dict:
    """Batched labels; returns arrays ``relpos (n, 2)``, ``distance (n,)``, ``iou (n,)``."""
    sub = np.asarray(sub, dtype=np.float64).reshape(-1, 4)
    obj = np.asarray(obj, dtype=np.float64).reshape(-1, 4)
    wh = np.broadcast_to(np.asarray(image_wh, dtype=np.float64), (len(sub), 2))
    cs, co = centroids_xywh(sub), centroids_xywh(obj)
    relpos = (co > cs).astype(np.float64)
    diff = cs - co
    dist = np.hypot(diff[:, 0], diff[:, 1]) / np.hypot(wh[:, 0], wh[:, 1])
    return {"relpos": relpos, "distance": dist, "iou": iou_xywh(sub, obj)}


class SelfSupLabeler(TransformerMixin, BaseEstimator):
    """Rows ``[xs, ys, ws, hs, xo, yo, wo, ho, W, H]`` -> ``[right, below, distance, iou]``."""

    def fit(self, X, y=None):
        X = check_array(X, dtype=np.float64)
        self.n_features_in_ = X.shape[1]
        return self

    def transform(self, X):
        X = check_array(X, dtype=np.float64)
        if X.shape[1] != 10:
            raise ValueError(f"expected 10 columns, got {X.shape[1]}")
        lab = labels_xywh(X[:, 0:4], X[:, 4:8], X[:, 8:10])
        return np.column_stack([lab["relpos"], lab["distance"], lab["iou"]])
