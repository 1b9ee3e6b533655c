"""Triplet ranking, recall@K (SGDET / SGCLS / PREDCLS) and threshold analytics."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .data import (GEOMETRIC, POSSESSIVE, RELATION_TYPES, Dataset, DetectionSet,
                   PredicateTaxonomy, SceneGraphAnnotation)
from .geometry import BoundingBox, ValidationError, iou
from .model import ModelParams, aux_heads, combine_predict, forward
from .trainer import all_pairs, make_pair_batch

PREDCLS, SGCLS, SGDET = "predcls", "sgcls", "sgdet"
MODES = (SGDET, SGCLS, PREDCLS)
DEFAULT_KS = (20, 50, 100)
SGDET_IOU = 0.5
ALPHA_THRESHOLDS = (0.5, 0.667, 0.75, 0.8, 0.833, 0.857, 0.875, 0.889, 0.9, 0.91, 0.92)


class InputError(ValueError):
    """Evaluation inputs required by the chosen mode are missing."""


@dataclass
class RelationshipPrediction:
    image_id: str
    sub_idx: int
    obj_idx: int
    subject_box: BoundingBox
    object_box: BoundingBox
    sub_class: int
    obj_class: int
    p_sub: float
    p_obj: float
    p_rel: np.ndarray
    feature: Optional[np.ndarray] = field(default=None, repr=False)

    @property
    def predicate(self) -> int:
        return int(np.argmax(self.p_rel))

    @property
    def confidence(self) -> float:
        return float(np.max(self.p_rel))

    @property
    def score(self) -> float:
        return self.p_sub * self.p_obj * self.confidence


@dataclass(frozen=True)
class RankedTriplet:
    pair_index: int
    predicate: int
    score: float
    prediction: RelationshipPrediction = field(repr=False, compare=False)


def rank_triplets(predictions: Sequence[RelationshipPrediction],
                  graph_constraint: bool = True) -> list[RankedTriplet]:
    """Rank by ``p_sub * p_obj * p_rel[r]``, descending.

    With the graph constraint each ordered pair contributes only its top
    predicate; otherwise every (pair, predicate) is a candidate. Ties go to
    the lower pair index, then the lower predicate id.
    """
    items = []
    for i, pred in enumerate(predictions):
        base = pred.p_sub * pred.p_obj
        p = np.asarray(pred.p_rel)
        rs = [int(np.argmax(p))] if graph_constraint else range(len(p))
        for r in rs:
            items.append(RankedTriplet(i, r, float(base * p[r]), pred))
    items.sort(key=lambda t: (-t.score, t.pair_index, t.predicate))
    return items


def _boxes_match(pred_box: BoundingBox, gt_box: BoundingBox, mode: str) -> bool:
    if mode == SGDET:
        return iou(pred_box, gt_box) >= SGDET_IOU
    return pred_box == gt_box


def match_count(gt: SceneGraphAnnotation, ranked: Sequence[RankedTriplet], k: int,
                mode: str, gt_triplets: Optional[Sequence] = None) -> int:
    """Number of GT triplets hit by the top ``k`` ranked triplets.

    Greedy in rank order: each prediction claims the first still-unmatched GT
    triplet it agrees with (predicate, both classes, both boxes).
    """
    if mode not in MODES:
        raise ValidationError(f"unknown mode {mode!r}")
    triplets = list(gt.triplets if gt_triplets is None else gt_triplets)
    matched = [False] * len(triplets)
    for t in ranked[:k]:
        pred = t.prediction
        for g, (s, r, o) in enumerate(triplets):
            if matched[g] or r != t.predicate:
                continue
            so, oo = gt.objects[s], gt.objects[o]
            if so.class_id != pred.sub_class or oo.class_id != pred.obj_class:
                continue
            if (_boxes_match(pred.subject_box, so.box, mode)
                    and _boxes_match(pred.object_box, oo.box, mode)):
                matched[g] = True
                break
    return sum(matched)


def recall_at_k(gt: SceneGraphAnnotation, ranked: Sequence[RankedTriplet], k: int,
                mode: str, gt_triplets: Optional[Sequence] = None) -> float:
    """Fraction of GT triplets matched in the top ``k``; NaN if there are none."""
    if k < 1:
        raise ValidationError("K must be >= 1")
    n_gt = len(gt.triplets if gt_triplets is None else gt_triplets)
    if n_gt == 0:
        return math.nan
    return match_count(gt, ranked, k, mode, gt_triplets) / n_gt


@dataclass
class RecallReport:
    mode: str
    ks: tuple
    recall: dict  # K -> recall
    per_type: dict  # relation type -> {K -> recall or None}
    n_images: int
    micro: bool = False

    def rows(self) -> list[list]:
        out = []
        for k in self.ks:
            row = [self.mode, k, self.recall[k]]
            row += [self.per_type[t][k] for t in RELATION_TYPES]
            out.append(row)
        return out

    HEADER = ("mode", "k", "recall", *(f"recall_{t.lower()}" for t in RELATION_TYPES))


def evaluate(dataset: Dataset, predictions: dict, mode: str,
             ks: Sequence[int] = DEFAULT_KS, graph_constraint: bool = True,
             micro: bool = False) -> RecallReport:
    """Recall@K over a dataset.

    ``predictions`` maps image id to that image's list of
    :class:`RelationshipPrediction`. Images are averaged with equal weight
    (macro) unless ``micro`` pools all GT triplets. Images without GT
    triplets (of the relevant type) are left out of the average.
    """
    if mode not in MODES:
        raise ValidationError(f"unknown mode {mode!r}")
    ks = tuple(int(k) for k in ks)
    groups = {None: None}
    for t in RELATION_TYPES:
        groups[t] = set(dataset.taxonomy.ids_of_type(t))
    # per group, per K: (sum of recalls or matches, number of images or GT triplets)
    acc = {g: {k: [0.0, 0] for k in ks} for g in groups}
    for ann in sorted(dataset.images, key=lambda a: a.image.id):
        ranked = rank_triplets(predictions.get(ann.image.id, []), graph_constraint)
        for g, ids in groups.items():
            trip = list(ann.triplets) if ids is None else [t for t in ann.triplets if t[1] in ids]
            if not trip:
                continue
            for k in ks:
                hits = match_count(ann, ranked, k, mode, trip)
                if micro:
                    acc[g][k][0] += hits
                    acc[g][k][1] += len(trip)
                else:
                    acc[g][k][0] += hits / len(trip)
                    acc[g][k][1] += 1

    def value(g, k):
        total, count = acc[g][k]
        return total / count if count else None

    recall = {k: (value(None, k) or 0.0) for k in ks}
    per_type = {t: {k: value(t, k) for k in ks} for t in RELATION_TYPES}
    return RecallReport(mode, ks, recall, per_type, len(dataset.images), micro)


# ----------------------------------------------------------- prediction

def predict_image(params: ModelParams, ann: SceneGraphAnnotation, mode: str = PREDCLS,
                  detections: Optional[DetectionSet] = None,
                  with_features: bool = False) -> list[RelationshipPrediction]:
    """Score every ordered pair of an image's objects under ``mode``."""
    if mode == PREDCLS:
        boxes = ann.boxes_array()
        classes = ann.classes_array()
        pobj = np.ones(len(ann.objects))
        feats = ann.features_array() if params.use_visual else None
        box_objs = [o.box for o in ann.objects]
    else:
        if detections is None or ann.image.id not in detections.images:
            raise InputError(f"{mode} needs detections for image {ann.image.id!r}")
        dets = detections.images[ann.image.id]
        probs = detections.probabilities(ann.image.id)
        if mode == SGCLS:
            if len(dets) != len(ann.objects):
                raise InputError(f"sgcls needs one class-score vector per GT object "
                                 f"in image {ann.image.id!r}")
            box_objs = [o.box for o in ann.objects]
            feats = ann.features_array() if params.use_visual else None
        else:
            box_objs = [d.box for d in dets]
            feats = None
            if params.use_visual and dets:
                if any(d.feature is None for d in dets):
                    raise InputError(f"detections of {ann.image.id!r} carry no ROI features")
                feats = np.array([d.feature for d in dets], dtype=np.float64)
        boxes = (np.stack([b.as_array() for b in box_objs]) if box_objs
                 else np.zeros((0, 4)))
        classes = (np.argmax(probs, axis=1).astype(np.int64) if len(box_objs)
                   else np.zeros(0, dtype=np.int64))
        pobj = probs.max(axis=1) if len(box_objs) else np.zeros(0)
    pairs = all_pairs(len(box_objs))
    if not pairs:
        return []
    # ground-truth lookup by index is meaningless for detections; labels unused here
    batch = make_pair_batch(ann if mode != SGDET else _bare(ann), pairs, params.use_visual,
                            boxes=boxes, classes=classes, features=feats)
    scores = forward(params, batch.x_spt, batch.x_vis, batch.sub_class, batch.obj_class)
    p = combine_predict(scores)
    hidden = None
    if with_features:
        parts = [h for h in (scores.hidden_spatial_final, scores.hidden_visual_final)
                 if h is not None]
        hidden = np.concatenate(parts, axis=1) if parts else scores.logits
    out = []
    for i, (s, o) in enumerate(pairs):
        out.append(RelationshipPrediction(
            ann.image.id, s, o, box_objs[s], box_objs[o], int(classes[s]), int(classes[o]),
            float(pobj[s]), float(pobj[o]), p[i],
            None if hidden is None else hidden[i]))
    return out


def _bare(ann: SceneGraphAnnotation) -> SceneGraphAnnotation:
    return SceneGraphAnnotation(ann.image, ann.objects, ())


def predict_dataset(params: ModelParams, dataset: Dataset, mode: str = PREDCLS,
                    detections: Optional[DetectionSet] = None,
                    with_features: bool = False) -> dict:
    if mode not in MODES:
        raise ValidationError(f"unknown mode {mode!r}")
    if mode != PREDCLS and detections is None:
        raise InputError(f"{mode} evaluation needs a detection set")
    return {ann.image.id: predict_image(params, ann, mode, detections, with_features)
            for ann in dataset.images}


def auxiliary_predictions(params: ModelParams, ann: SceneGraphAnnotation):
    """Auxiliary head outputs for every ordered GT pair (diagnostics)."""
    pairs = all_pairs(len(ann.objects))
    batch = make_pair_batch(ann, pairs, params.use_visual)
    scores = forward(params, batch.x_spt, batch.x_vis, batch.sub_class, batch.obj_class)
    return pairs, aux_heads(params, scores), batch.labels


# ------------------------------------------------------------- analytics

@dataclass
class AlphaCurve:
    thresholds: list
    alpha: list  # None where the possessive count is zero
    counts: dict  # relation type -> list of counts per threshold

    HEADER = ("threshold", "geo_count", "pos_count", "alpha")

    def rows(self) -> list[list]:
        return [[t, self.counts[GEOMETRIC][i], self.counts[POSSESSIVE][i], self.alpha[i]]
                for i, t in enumerate(self.thresholds)]


def _flatten(predictions) -> list[RelationshipPrediction]:
    if isinstance(predictions, dict):
        return [p for key in sorted(predictions) for p in predictions[key]]
    return list(predictions)


def alpha_curve(predictions, taxonomy: PredicateTaxonomy,
                thresholds: Sequence[float] = ALPHA_THRESHOLDS) -> AlphaCurve:
    """Geometric-to-possessive ratio of confident predictions per threshold.

    A prediction counts at threshold ``t`` when its top predicate
    probability exceeds ``t``; it is bucketed by that predicate's type.
    """
    thresholds = [float(t) for t in thresholds]
    if any(not 0 < t < 1 for t in thresholds):
        raise ValidationError("thresholds must lie in (0, 1)")
    if any(b <= a for a, b in zip(thresholds, thresholds[1:])):
        raise ValidationError("thresholds must be strictly increasing")
    preds = _flatten(predictions)
    conf = np.array([p.confidence for p in preds])
    types = np.array([taxonomy.type_of(p.predicate) for p in preds], dtype=object)
    counts = {t: [] for t in RELATION_TYPES}
    alpha = []
    for th in thresholds:
        above = conf > th
        for t in RELATION_TYPES:
            counts[t].append(int(np.sum(above & (types == t))) if len(preds) else 0)
        pos = counts[POSSESSIVE][-1]
        alpha.append(counts[GEOMETRIC][-1] / pos if pos else None)
    return AlphaCurve(thresholds, alpha, counts)


def nontrivial_count(predictions, taxonomy: PredicateTaxonomy, threshold: float) -> int:
    if not 0 < threshold < 1:
        raise ValidationError("threshold must lie in (0, 1)")
    return sum(1 for p in _flatten(predictions)
               if p.confidence > threshold and p.predicate not in taxonomy.trivial_ids)


def export_features(params: ModelParams, dataset: Dataset, threshold: float = 0.5,
                    mode: str = PREDCLS, detections: Optional[DetectionSet] = None):
    """Final hidden-layer relationship features of confident predictions.

    Returns ``(header, rows)``; rows are ordered by (image id, pair index).
    """
    width = sum(params.specs[t].layer_widths[-2] for t in ("spatial", "visual")
                if t in params.specs)
    header = ["image_id", "pair_index", "sub_idx", "obj_idx", "predicate", "type",
              "confidence", *(f"f{i}" for i in range(width))]
    rows = []
    for ann in sorted(dataset.images, key=lambda a: a.image.id):
        preds = predict_image(params, ann, mode, detections, with_features=True)
        for i, p in enumerate(preds):
            if p.confidence > threshold:
                rows.append([ann.image.id, i, p.sub_idx, p.obj_idx, p.predicate,
                             dataset.taxonomy.type_of(p.predicate), p.confidence,
                             *p.feature.tolist()])
    return header, rows
