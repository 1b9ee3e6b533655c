"""The 22-dimensional subject/object spatial feature.

Layout (fixed): ``delta(s, u)``, ``delta(u, o)``, ``delta(s, o)``,
``norm(s)``, ``norm(o)`` where ``u`` is the union box of the pair.
"""
from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_array

from .data import ImageMeta
from .geometry import BoundingBox, union_box, union_xywh

SPATIAL_DIM = 22


def delta_box(b1: BoundingBox, b2: BoundingBox) -> np.ndarray:
    return np.array([
        (b1.x - b2.x) / b2.w,
        (b1.y - b2.y) / b2.h,
        np.log(b1.w / b2.w),
        np.log(b1.h / b2.h),
    ])


def normalized_box(b: BoundingBox, img: ImageMeta) -> np.ndarray:
    W, H = img.width, img.height
    return np.array([b.x / W, b.y / H, (b.x + b.w) / W, (b.y + b.h) / H,
                     b.w * b.h / (W * H)])


def spatial_feature(b_s: BoundingBox, b_o: BoundingBox, img: ImageMeta) -> np.ndarray:
    b_u = union_box(b_s, b_o)
    return np.concatenate([
        delta_box(b_s, b_u),
        delta_box(b_u, b_o),
        delta_box(b_s, b_o),
        normalized_box(b_s, img),
        normalized_box(b_o, img),
    ])


def _delta_xywh(a, b):
    return np.stack([
        (a[:, 0] - b[:, 0]) / b[:, 2],
        (a[:, 1] - b[:, 1]) / b[:, 3],
        np.log(a[:, 2] / b[:, 2]),
        np.log(a[:, 3] / b[:, 3]),
    ], axis=1)


def _norm_xywh(a, wh):
    W, H = wh[:, 0], wh[:, 1]
    return np.stack([
        a[:, 0] / W, a[:, 1] / H,
        (a[:, 0] + a[:, 2]) / W, (a[:, 1] + a[:, 3]) / H,
        a[:, 2] * a[:, 3] / (W * H),
    ], axis=1)


def spatial_features_xywh(sub: np.ndarray, obj: np.ndarray, image_wh: np.ndarray) -> np.ndarray:
    """Batched :func:`spatial_feature` over ``(n, 4)`` box arrays.

    ``image_wh`` is ``(n, 2)`` or a single ``(2,)`` pair broadcast to all rows.
    """
    sub = np.asarray(sub, dtype=np.float64).reshape(-1, 4)
    obj = np.asarray(obj, dtype=np.float64).reshape(-1, 4)
    wh = np.broadcast_to(np.asarray(image_wh, dtype=np.float64), (len(sub), 2))
    uni = union_xywh(sub, obj)
    return np.concatenate([
        _delta_xywh(sub, uni),
        _delta_xywh(uni, obj),
        _delta_xywh(sub, obj),
        _norm_xywh(sub, wh),
        _norm_xywh(obj, wh),
    ], axis=1)


class SpatialFeatureTransformer(TransformerMixin, BaseEstimator):
    """Maps rows ``[xs, ys, ws, hs, xo, yo, wo, ho, W, H]`` to spatial features.

    Stateless; ``fit`` only validates and records the input width.
    """

    def fit(self, X, y=None):
        X = self._validate(X)
        self.n_features_in_ = X.shape[1]
        return self

    def transform(self, X):
        X = self._validate(X)
        return spatial_features_xywh(X[:, 0:4], X[:, 4:8], X[:, 8:10])

    def get_feature_names_out(self, input_features=None):
        blocks = [("d_s_u", 4), ("d_u_o", 4), ("d_s_o", 4), ("c_s", 5), ("c_o", 5)]
        return np.array([f"{name}_{i}" for name, k in blocks for i in range(k)], dtype=object)

    @staticmethod
    def _validate(X):
        X = check_array(X, dtype=np.float64)
        if X.shape[1] != 10:
            raise ValueError(f"expected 10 columns (two xywh boxes and W, H), got {X.shape[1]}")
        if np.any(X[:, [2, 3, 6, 7]] <= 0):
            raise ValueError("box widths and heights must be positive")
        return X
