"""Scene-graph data model: images, objects, predicate taxonomy, datasets."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .geometry import BoundingBox, ValidationError

GEOMETRIC = "Geometric"
POSSESSIVE = "Possessive"
SEMANTIC = "Semantic"
OTHER = "Other"
RELATION_TYPES = (GEOMETRIC, POSSESSIVE, SEMANTIC, OTHER)


@dataclass(frozen=True)
class ImageMeta:
    id: str
    width: float
    height: float

    def __post_init__(self):
        if not (self.width > 0 and self.height > 0):
            raise ValidationError(
                f"image {self.id!r}: dimensions must be positive, got {self.width}x{self.height}")

    @property
    def diagonal(self) -> float:
        return float(np.hypot(self.width, self.height))


@dataclass(frozen=True)
class ObjectInstance:
    box: BoundingBox
    class_id: int
    feature: Optional[tuple] = None

    def feature_array(self) -> Optional[np.ndarray]:
        if self.feature is None:
            return None
        return np.asarray(self.feature, dtype=np.float64)


@dataclass(frozen=True)
class PredicateTaxonomy:
    """Predicate names, their relationship type, and the trivial subset."""

    names: tuple
    types: tuple
    trivial_ids: frozenset = frozenset()

    def __post_init__(self):
        if len(self.names) != len(self.types):
            raise ValidationError("taxonomy: every predicate needs exactly one type")
        for t in self.types:
            if t not in RELATION_TYPES:
                raise ValidationError(f"taxonomy: unknown relation type {t!r}")
        for r in self.trivial_ids:
            if not 0 <= r < len(self.names):
                raise ValidationError(f"taxonomy: trivial id {r} out of range")

    @property
    def n_predicates(self) -> int:
        return len(self.names)

    def type_of(self, predicate_id: int) -> str:
        return self.types[predicate_id]

    def ids_of_type(self, rel_type: str) -> list[int]:
        return [i for i, t in enumerate(self.types) if t == rel_type]


@dataclass(frozen=True)
class SceneGraphAnnotation:
    image: ImageMeta
    objects: tuple
    triplets: tuple  # (subject_idx, predicate_id, object_idx)

    def validate(self, n_classes: int, n_predicates: int, d_vis: int = 0) -> None:
        img = self.image
        for k, obj in enumerate(self.objects):
            b = obj.box
            if not 0 <= obj.class_id < n_classes:
                raise ValidationError(
                    f"image {img.id!r} object {k}: class_id {obj.class_id} not in [0, {n_classes})")
            # small slack for boxes written as floats by external tools
            tol = 1e-9 * max(img.width, img.height)
            if b.x2 > img.width + tol or b.y2 > img.height + tol:
                raise ValidationError(f"image {img.id!r} object {k}: box extends outside image")
            if obj.feature is not None and d_vis and len(obj.feature) != d_vis:
                raise ValidationError(
                    f"image {img.id!r} object {k}: feature has length {len(obj.feature)}, expected {d_vis}")
        n = len(self.objects)
        for t, (s, r, o) in enumerate(self.triplets):
            if s == o:
                raise ValidationError(f"image {img.id!r} triplet {t}: subject equals object")
            if not (0 <= s < n and 0 <= o < n):
                raise ValidationError(f"image {img.id!r} triplet {t}: object index out of range")
            if not 0 <= r < n_predicates:
                raise ValidationError(f"image {img.id!r} triplet {t}: predicate {r} out of range")

    def boxes_array(self) -> np.ndarray:
        if not self.objects:
            return np.zeros((0, 4))
        return np.stack([o.box.as_array() for o in self.objects])

    def classes_array(self) -> np.ndarray:
        return np.array([o.class_id for o in self.objects], dtype=np.int64)

    def features_array(self) -> Optional[np.ndarray]:
        if not self.objects or any(o.feature is None for o in self.objects):
            return None
        return np.stack([o.feature_array() for o in self.objects])


@dataclass(frozen=True)
class Detection:
    box: BoundingBox
    class_scores: tuple
    feature: Optional[tuple] = None


@dataclass
class DetectionSet:
    """Detector stand-in: per-image detections keyed by image id.

    ``normalized`` declares whether score vectors are probabilities (sum <= 1)
    or unnormalized logits that must go through a softmax first.
    """

    images: dict = field(default_factory=dict)
    normalized: bool = True

    def probabilities(self, image_id: str) -> np.ndarray:
        dets = self.images[image_id]
        if not dets:
            return np.zeros((0, 0))
        scores = np.array([d.class_scores for d in dets], dtype=np.float64)
        if self.normalized:
            if np.any(scores.sum(axis=1) > 1 + 1e-6) or np.any(scores < 0):
                raise ValidationError(f"image {image_id!r}: class scores are not probabilities")
            return scores
        scores = scores - scores.max(axis=1, keepdims=True)
        e = np.exp(scores)
        return e / e.sum(axis=1, keepdims=True)


@dataclass
class Dataset:
    taxonomy: PredicateTaxonomy
    class_names: tuple
    images: list
    d_vis: int = 0
    version: int = 1

    @property
    def n_classes(self) -> int:
        return len(self.class_names)

    @property
    def n_predicates(self) -> int:
        return self.taxonomy.n_predicates

    @property
    def has_features(self) -> bool:
        return self.d_vis > 0 and all(
            o.feature is not None for ann in self.images for o in ann.objects)

    def validate(self) -> None:
        for ann in self.images:
            ann.validate(self.n_classes, self.n_predicates, self.d_vis)

    def subset(self, indices: Sequence[int]) -> "Dataset":
        return Dataset(self.taxonomy, self.class_names,
                       [self.images[i] for i in indices], self.d_vis, self.version)
