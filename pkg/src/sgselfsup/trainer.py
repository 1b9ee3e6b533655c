"""Pair sampling and plain SGD training of the relationship classifier."""
from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .data import Dataset, SceneGraphAnnotation
from .geometry import ValidationError
from .model import (DEFAULT_WEIGHTS, ConfigurationError, LossBreakdown, ModelParams,
                    PairBatch, build_semantic_prior, init_params, loss_and_grad,
                    relation_feature)
from .selfsup import labels_xywh
from .spatial import spatial_features_xywh

logger = logging.getLogger(__name__)

LOG_HEADER = "epoch,L0,L_task1,L_task2,L_task3,L_task4,L,seconds"


@dataclass
class TrainConfig:
    learning_rate: float = 0.005
    epochs: int = 10
    pairs_per_image: int = 512
    loss_weights: tuple = DEFAULT_WEIGHTS
    seed: int = 0
    batch_images: int = 4
    # per-epoch learning-rate multiplier; 1.0 keeps it constant
    lr_decay: float = 1.0
    prior_smoothing: float = 1.0
    use_spatial: bool = True
    use_visual: bool = True
    spatial_hidden: tuple = (64, 64)
    visual_hidden: tuple = (128, 64)
    relpos_hidden: tuple = (32,)
    scalar_hidden: tuple = (32, 16)

    def validate(self) -> None:
        if not self.learning_rate > 0:
            raise ValidationError("learning_rate must be positive")
        if self.epochs < 1 or self.pairs_per_image < 1 or self.batch_images < 1:
            raise ValidationError("epochs, pairs_per_image and batch_images must be >= 1")
        if len(self.loss_weights) != 4 or any(w < 0 for w in self.loss_weights):
            raise ValidationError("loss_weights needs four non-negative values")
        if not self.lr_decay > 0:
            raise ValidationError("lr_decay must be positive")

    def widths(self) -> dict:
        return {"spatial_hidden": tuple(self.spatial_hidden),
                "visual_hidden": tuple(self.visual_hidden),
                "relpos_hidden": tuple(self.relpos_hidden),
                "scalar_hidden": tuple(self.scalar_hidden)}


@dataclass
class TrainReport:
    epochs: list = field(default_factory=list)  # step-averaged LossBreakdown per epoch
    seconds: list = field(default_factory=list)
    checkpoint: Optional[str] = None

    @property
    def wall_seconds(self) -> float:
        return float(sum(self.seconds))

    def log_lines(self) -> list[str]:
        lines = [LOG_HEADER]
        for i, (lb, sec) in enumerate(zip(self.epochs, self.seconds), start=1):
            vals = ",".join(repr(float(v)) for v in lb.as_row())
            lines.append(f"{i},{vals},{sec:.3f}")
        return lines


def sample_pairs(n_objects: int, k: int, gt_triplets: Sequence = (),
                 rng: Optional[np.random.Generator] = None) -> list[tuple[int, int]]:
    """Up to ``k`` distinct ordered pairs ``(i, j)``, ``i != j``.

    Ground-truth pairs come first (all of them when ``k`` allows), and the
    remainder is drawn uniformly without replacement from the other pairs.
    """
    if k < 1:
        raise ValidationError("k must be >= 1")
    if n_objects < 2:
        return []
    rng = rng if rng is not None else np.random.default_rng()
    positives = list(dict.fromkeys((int(s), int(o)) for s, _, o in gt_triplets))
    if len(positives) > k:
        pick = np.sort(rng.choice(len(positives), size=k, replace=False))
        return [positives[i] for i in pick]
    out = list(positives)
    budget = min(k, n_objects * (n_objects - 1)) - len(out)
    if budget <= 0:
        return out
    taken = {s * n_objects + o for s, o in positives}
    # flat index over the n*(n-1) off-diagonal slots
    n_pairs = n_objects * (n_objects - 1)
    candidates = np.arange(n_pairs)
    rows = candidates // (n_objects - 1)
    cols = candidates % (n_objects - 1)
    cols = cols + (cols >= rows)
    flat = rows * n_objects + cols
    if taken:
        keep = ~np.isin(flat, np.fromiter(taken, dtype=np.int64))
        rows, cols = rows[keep], cols[keep]
    chosen = rng.choice(len(rows), size=budget, replace=False)
    out.extend((int(rows[c]), int(cols[c])) for c in chosen)
    return out


def all_pairs(n_objects: int) -> list[tuple[int, int]]:
    return [(s, o) for s in range(n_objects) for o in range(n_objects) if s != o]


def make_pair_batch(ann: SceneGraphAnnotation, pairs: Sequence[tuple[int, int]],
                    use_visual: bool = True, boxes: Optional[np.ndarray] = None,
                    classes: Optional[np.ndarray] = None,
                    features: Optional[np.ndarray] = None) -> PairBatch:
    """Model inputs and targets for ``pairs`` of ``ann``.

    ``boxes``, ``classes`` and ``features`` override the annotation's own
    (used for detected objects); ground-truth predicates are looked up only
    from the annotation's triplets by object index.
    """
    boxes = ann.boxes_array() if boxes is None else boxes
    classes = ann.classes_array() if classes is None else classes
    pairs = np.asarray(pairs, dtype=np.int64).reshape(-1, 2)
    si, oi = pairs[:, 0], pairs[:, 1]
    wh = np.array([ann.image.width, ann.image.height])
    x_spt = spatial_features_xywh(boxes[si], boxes[oi], wh)
    x_vis = None
    if use_visual:
        feats = ann.features_array() if features is None else features
        if feats is None:
            raise ConfigurationError(f"image {ann.image.id!r} has objects without ROI features")
        x_vis = np.concatenate([feats[si], feats[oi],
                                relation_feature(feats[si], feats[oi])], axis=1)
    gt_map: dict = {}
    for s, r, o in ann.triplets:
        gt_map.setdefault((s, o), r)
    gt = np.array([gt_map.get((int(s), int(o)), -1) for s, o in pairs], dtype=np.int64)
    lab = labels_xywh(boxes[si], boxes[oi], wh)
    return PairBatch(x_spt, x_vis, classes[si], classes[oi], gt,
                     lab["relpos"], lab["distance"], lab["iou"])


def sgd_step(params: ModelParams, grads: dict, lr: float) -> ModelParams:
    """In-place ``theta <- theta - lr * grad`` over every tensor with a gradient."""
    for net, layer_grads in grads.items():
        for (W, b), (dW, db) in zip(params.layers[net], layer_grads):
            if W.shape != dW.shape or b.shape != db.shape:
                raise ConfigurationError(f"gradient shape mismatch in {net}")
            W -= lr * dW
            b -= lr * db
    return params


def check_dataset(dataset: Dataset, config: TrainConfig) -> None:
    if not dataset.images:
        raise ValidationError("training dataset is empty")
    if config.use_visual and not dataset.has_features:
        raise ConfigurationError("visual module enabled but the dataset lacks ROI features "
                                 "(disable it with use_visual=False / --no-visual)")
    dataset.validate()


def train(dataset: Dataset, config: TrainConfig,
          params: Optional[ModelParams] = None) -> tuple[TrainReport, ModelParams]:
    """Run ``config.epochs`` passes of sample -> loss -> backprop -> SGD step."""
    config.validate()
    check_dataset(dataset, config)
    if params is None:
        prior = build_semantic_prior(dataset, config.prior_smoothing)
        params = init_params(dataset.n_classes, dataset.n_predicates,
                             dataset.d_vis if config.use_visual else 0, config.seed,
                             semantic_logprior=prior, use_spatial=config.use_spatial,
                             use_visual=config.use_visual, **config.widths())
    rng = np.random.default_rng(config.seed + 1)
    report = TrainReport()
    n_images = len(dataset.images)
    n_steps = math.ceil(n_images / config.batch_images)
    lr = config.learning_rate
    for epoch in range(config.epochs):
        t0 = time.perf_counter()
        order = rng.permutation(n_images)
        sums = np.zeros(6)
        steps = n_pairs = 0
        for step in range(n_steps):
            chunk = order[step * config.batch_images:(step + 1) * config.batch_images]
            parts = []
            for i in chunk:
                ann = dataset.images[i]
                pairs = sample_pairs(len(ann.objects), config.pairs_per_image, ann.triplets, rng)
                if pairs:
                    parts.append(make_pair_batch(ann, pairs, config.use_visual))
            if not parts:
                continue
            batch = PairBatch.concat(parts)
            loss, grads = loss_and_grad(params, batch, config.loss_weights)
            sgd_step(params, grads, lr)
            sums += loss.as_row()
            steps += 1
            n_pairs += len(batch)
        mean = sums / max(steps, 1)
        report.epochs.append(LossBreakdown(*mean, n=n_pairs,
                                           weights=tuple(config.loss_weights)))
        report.seconds.append(time.perf_counter() - t0)
        logger.info("epoch %d: L0=%.4f L=%.4f (%.1fs)", epoch + 1, mean[0], mean[5],
                    report.seconds[-1])
        lr *= config.lr_decay
    return report, params
