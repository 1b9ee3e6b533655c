"""Seeded synthetic scenes whose predicates are functions of box geometry.

The default rule set (``"default"``) labels an ordered pair from its IoU,
centroid offset, box areas and, for medium overlap, the subject class:

=============  =================================================  ==========
predicate      condition                                          type
=============  =================================================  ==========
above          IoU < 0.1, mostly vertical offset, object lower    Geometric
under          IoU < 0.1, mostly vertical offset, object higher   Geometric
beside         IoU < 0.1, mostly horizontal offset                Geometric
near           0.1 <= IoU < 0.3, subject class % 3 == 2           Geometric
has            IoU >= 0.3, subject area > object area             Possessive
part_of        IoU >= 0.3, otherwise                              Possessive
using          0.1 <= IoU < 0.3, subject class % 3 == 0           Semantic
for            0.1 <= IoU < 0.3, subject class % 3 == 1           Other
=============  =================================================  ==========
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .data import (GEOMETRIC, OTHER, POSSESSIVE, SEMANTIC, Dataset, Detection,
                   DetectionSet, ImageMeta, ObjectInstance, PredicateTaxonomy,
                   SceneGraphAnnotation)
from .geometry import BoundingBox, ValidationError, centroid, iou
from .spatial import normalized_box

RULE_SETS = {
    "default": (
        ("above", "under", "beside", "near", "has", "part_of", "using", "for"),
        (GEOMETRIC, GEOMETRIC, GEOMETRIC, GEOMETRIC, POSSESSIVE, POSSESSIVE, SEMANTIC, OTHER),
    ),
}
LOW_IOU, HIGH_IOU = 0.1, 0.3


@dataclass
class SynthConfig:
    n_images: int = 200
    objects_per_image: tuple = (3, 5)
    image_size: tuple = (100.0, 100.0)
    n_classes: int = 6
    d_vis: int = 16
    rule_set: str = "default"
    label_noise: float = 0.0
    class_score_sigma: float = 0.0
    box_jitter: float = 0.0
    feature_noise: float = 0.01
    pair_fraction: float = 0.5
    # pairs this close to a rule boundary are left unannotated
    margin: float = 0.02
    seed: int = 0
    # fixes the feature projection so separately seeded splits share one feature space
    projection_seed: int = 0

    def validate(self) -> None:
        lo, hi = self.objects_per_image
        if self.n_images < 1:
            raise ValidationError("n_images must be >= 1")
        if lo < 1 or hi < lo:
            raise ValidationError(f"bad objects_per_image range {self.objects_per_image}")
        if self.rule_set not in RULE_SETS:
            raise ValidationError(f"unknown rule set {self.rule_set!r}")
        if not 0 <= self.label_noise < 1:
            raise ValidationError("label_noise must be in [0, 1)")
        if self.class_score_sigma < 0 or self.box_jitter < 0 or self.feature_noise < 0:
            raise ValidationError("noise levels must be non-negative")
        if self.n_classes < 3:
            raise ValidationError("the default rule set needs at least 3 classes")
        if self.d_vis < 0:
            raise ValidationError("d_vis must be >= 0")
        if not 0 < self.pair_fraction <= 1:
            raise ValidationError("pair_fraction must be in (0, 1]")

    @property
    def taxonomy(self) -> PredicateTaxonomy:
        names, types = RULE_SETS[self.rule_set]
        return PredicateTaxonomy(names, types)


@dataclass
class SynthData:
    dataset: Dataset
    detections: DetectionSet
    stats: dict = field(default_factory=dict)


def rule_predicate(b_s: BoundingBox, b_o: BoundingBox, sub_class: int) -> int:
    """Predicate id assigned by the default rule set."""
    u = iou(b_s, b_o)
    if u >= HIGH_IOU:
        return 4 if b_s.area > b_o.area else 5
    if u < LOW_IOU:
        (sx, sy), (ox, oy) = centroid(b_s), centroid(b_o)
        dx, dy = ox - sx, oy - sy
        if abs(dy) >= abs(dx):
            return 0 if dy > 0 else 1
        return 2
    return (6, 7, 3)[sub_class % 3]


def rule_margin(b_s: BoundingBox, b_o: BoundingBox, img: ImageMeta) -> float:
    """Distance of a pair from the nearest decision boundary of the rule set,
    in unitless terms (IoU, log-area ratio, offset / image diagonal)."""
    u = iou(b_s, b_o)
    m = min(abs(u - LOW_IOU), abs(u - HIGH_IOU))
    if u >= HIGH_IOU:
        m = min(m, abs(np.log(b_s.area / b_o.area)))
    elif u < LOW_IOU:
        (sx, sy), (ox, oy) = centroid(b_s), centroid(b_o)
        dx, dy = ox - sx, oy - sy
        m = min(m, abs(abs(dy) - abs(dx)) / img.diagonal)
        if abs(dy) >= abs(dx):
            m = min(m, abs(dy) / img.diagonal)
    return float(m)


def _random_box(rng, W, H, anchor: BoundingBox | None = None) -> BoundingBox:
    if anchor is None:
        w = rng.uniform(0.08, 0.4) * W
        h = rng.uniform(0.08, 0.4) * H
    else:
        w = anchor.w * rng.uniform(0.5, 1.6)
        h = anchor.h * rng.uniform(0.5, 1.6)
        w, h = min(w, 0.9 * W), min(h, 0.9 * H)
    if anchor is None:
        x = rng.uniform(0, W - w)
        y = rng.uniform(0, H - h)
    else:
        cx = anchor.x + anchor.w / 2 + rng.normal(0, 0.35) * anchor.w
        cy = anchor.y + anchor.h / 2 + rng.normal(0, 0.35) * anchor.h
        x = float(np.clip(cx - w / 2, 0, W - w))
        y = float(np.clip(cy - h / 2, 0, H - h))
    return BoundingBox(float(x), float(y), float(w), float(h))


def _geometry_vector(b: BoundingBox, img: ImageMeta) -> np.ndarray:
    return np.append(normalized_box(b, img), 1.0)


def _jitter(rng, b: BoundingBox, scale: float, W: float, H: float) -> BoundingBox:
    if scale == 0:
        return b
    w = max(b.w * np.exp(rng.normal(0, scale)), 1e-3 * W)
    h = max(b.h * np.exp(rng.normal(0, scale)), 1e-3 * H)
    w, h = min(w, W), min(h, H)
    x = float(np.clip(b.x + rng.normal(0, scale) * b.w, 0, W - w))
    y = float(np.clip(b.y + rng.normal(0, scale) * b.h, 0, H - h))
    return BoundingBox(x, y, float(w), float(h))


def _class_scores(rng, cls: int, C: int, sigma: float) -> tuple:
    if sigma == 0:
        s = np.zeros(C)
        s[cls] = 1.0
        return tuple(s.tolist())
    z = 3.0 * np.eye(C)[cls] + sigma * rng.normal(size=C)
    z -= z.max()
    e = np.exp(z)
    return tuple((e / e.sum()).tolist())


def generate(config: SynthConfig | None = None) -> SynthData:
    config = config or SynthConfig()
    config.validate()
    rng = np.random.default_rng(config.seed)
    W, H = (float(v) for v in config.image_size)
    C, D = config.n_classes, config.d_vis
    taxonomy = config.taxonomy
    R = taxonomy.n_predicates
    projection = (np.random.default_rng(config.projection_seed).normal(0, 1.0, size=(6, D))
                  if D else None)

    def feature_of(b, img):
        if not D:
            return None
        v = _geometry_vector(b, img) @ projection + config.feature_noise * rng.normal(size=D)
        return tuple(v.tolist())

    images, dets = [], {}
    type_counts = {t: 0 for t in ("Geometric", "Possessive", "Semantic", "Other")}
    for k in range(config.n_images):
        img = ImageMeta(f"synth_{k:06d}", W, H)
        n = int(rng.integers(config.objects_per_image[0], config.objects_per_image[1] + 1))
        boxes: list[BoundingBox] = []
        for _ in range(n):
            anchor = boxes[int(rng.integers(len(boxes)))] if boxes and rng.random() < 0.5 else None
            boxes.append(_random_box(rng, W, H, anchor))
        classes = rng.integers(0, C, size=n)
        objects = tuple(ObjectInstance(b, int(c), feature_of(b, img))
                        for b, c in zip(boxes, classes))
        triplets = []
        for s in range(n):
            for o in range(n):
                if s == o or rng.random() >= config.pair_fraction:
                    continue
                if rule_margin(boxes[s], boxes[o], img) < config.margin:
                    continue
                r = rule_predicate(boxes[s], boxes[o], int(classes[s]))
                if config.label_noise and rng.random() < config.label_noise:
                    r = int((r + rng.integers(1, R)) % R)
                triplets.append((s, r, o))
                type_counts[taxonomy.type_of(r)] += 1
        images.append(SceneGraphAnnotation(img, objects, tuple(triplets)))
        img_dets = []
        for obj in objects:
            jb = _jitter(rng, obj.box, config.box_jitter, W, H)
            feat = obj.feature if jb == obj.box else feature_of(jb, img)
            img_dets.append(Detection(jb, _class_scores(rng, obj.class_id, C,
                                                        config.class_score_sigma), feat))
        dets[img.id] = img_dets
    class_names = tuple(f"class_{c}" for c in range(C))
    dataset = Dataset(taxonomy, class_names, images, D)
    return SynthData(dataset, DetectionSet(dets), {"type_counts": type_counts})
