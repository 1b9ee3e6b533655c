"""Relationship classifier with auxiliary self-supervision heads.

Three modules score every predicate for a subject/object pair:

* spatial: MLP over the 22-d spatial feature
* visual: MLP over concatenated subject, object and relation ROI features
* semantic: a fixed, smoothed log-frequency prior indexed by the class pair

The fused prediction is ``softmax(f_spt + f_vis + f_sem)``. Four auxiliary
heads hang off the trunks: relative position (sigmoid x2) from the spatial
module's final hidden layer, centroid distance (softplus) from the spatial and
visual pre-final hidden layers, and IoU (softplus) from the visual pre-final
hidden layer.
"""
from __future__ import annotations

import io
import json
import zipfile
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .geometry import ValidationError
from .nn import MlpSpec, init_mlp, mlp_backward, mlp_forward

BCE_EPS = 1e-12
DEFAULT_WEIGHTS = (1.0, 1.0, 1.0, 1.0)
CHECKPOINT_FORMAT = "sgselfsup-checkpoint"
CHECKPOINT_VERSION = 1

TRUNKS = ("spatial", "visual")
HEADS = ("relpos", "dist_spt", "dist_vis", "iou")
# head -> (trunk it reads, hidden-activation depth counted back from the last hidden)
HEAD_SOURCES = {
    "relpos": ("spatial", 0),
    "dist_spt": ("spatial", 1),
    "dist_vis": ("visual", 1),
    "iou": ("visual", 1),
}
# task index (1-based, as in the loss weights) -> head
TASK_HEADS = {1: "relpos", 2: "dist_spt", 3: "iou", 4: "dist_vis"}


class ConfigurationError(ValueError):
    """Shapes or dimensions disagree with the model configuration."""


@dataclass
class ModelParams:
    specs: dict
    layers: dict
    semantic_logprior: np.ndarray
    n_classes: int
    n_predicates: int
    d_vis: int
    seed: int
    use_spatial: bool = True
    use_visual: bool = True

    def networks(self) -> list[str]:
        names = []
        if self.use_spatial:
            names += ["spatial", "relpos", "dist_spt"]
        if self.use_visual:
            names += ["visual", "dist_vis", "iou"]
        return names

    def named_arrays(self):
        """Yields ``(name, array)`` for every trainable tensor in a fixed order."""
        for net in self.networks():
            for i, (W, b) in enumerate(self.layers[net]):
                yield f"{net}.{i}.W", W
                yield f"{net}.{i}.b", b

    def copy(self) -> "ModelParams":
        layers = {k: [[W.copy(), b.copy()] for W, b in v] for k, v in self.layers.items()}
        return ModelParams(dict(self.specs), layers, self.semantic_logprior.copy(),
                           self.n_classes, self.n_predicates, self.d_vis, self.seed,
                           self.use_spatial, self.use_visual)


def default_specs(n_predicates: int, d_vis: int,
                  spatial_hidden=(64, 64), visual_hidden=(128, 64),
                  relpos_hidden=(32,), scalar_hidden=(32, 16),
                  use_spatial=True, use_visual=True) -> dict:
    if len(spatial_hidden) < 2 or len(visual_hidden) < 2:
        raise ConfigurationError("trunks need at least two hidden layers (final and pre-final)")
    specs = {}
    if use_spatial:
        specs["spatial"] = MlpSpec((22, *spatial_hidden, n_predicates))
        specs["relpos"] = MlpSpec((spatial_hidden[-1], *relpos_hidden, 2),
                                  output_activation="sigmoid")
        specs["dist_spt"] = MlpSpec((spatial_hidden[-2], *scalar_hidden, 1),
                                    output_activation="softplus")
    if use_visual:
        if d_vis <= 0:
            raise ConfigurationError("visual module needs ROI features (d_vis > 0)")
        specs["visual"] = MlpSpec((3 * d_vis, *visual_hidden, n_predicates))
        for name in ("dist_vis", "iou"):
            specs[name] = MlpSpec((visual_hidden[-2], *scalar_hidden, 1),
                                  output_activation="softplus")
    return specs


def init_params(n_classes: int, n_predicates: int, d_vis: int, seed: int = 0,
                semantic_logprior: Optional[np.ndarray] = None,
                use_spatial: bool = True, use_visual: bool = True, **widths) -> ModelParams:
    if not (use_spatial or use_visual) and semantic_logprior is None:
        raise ConfigurationError("a model without spatial and visual modules needs a prior")
    specs = default_specs(n_predicates, d_vis, use_spatial=use_spatial,
                          use_visual=use_visual, **widths)
    rng = np.random.default_rng(seed)
    layers = {}
    for name in ("spatial", "relpos", "dist_spt", "visual", "dist_vis", "iou"):
        if name in specs:
            layers[name] = init_mlp(specs[name], rng)
    if semantic_logprior is None:
        semantic_logprior = np.full((n_classes, n_classes, n_predicates), -np.log(n_predicates))
    semantic_logprior = np.asarray(semantic_logprior, dtype=np.float64)
    if semantic_logprior.shape != (n_classes, n_classes, n_predicates):
        raise ConfigurationError(
            f"prior shape {semantic_logprior.shape} != {(n_classes, n_classes, n_predicates)}")
    return ModelParams(specs, layers, semantic_logprior, n_classes, n_predicates, d_vis,
                       int(seed), use_spatial, use_visual)


def build_semantic_prior(dataset, smoothing: float = 1.0,
                         n_classes: Optional[int] = None,
                         n_predicates: Optional[int] = None) -> np.ndarray:
    """Smoothed log P(predicate | subject class, object class) from GT triplets.

    ``dataset`` is a :class:`~sgselfsup.data.Dataset` or a sequence of
    annotations (then ``n_classes`` and ``n_predicates`` are required).
    """
    images = getattr(dataset, "images", dataset)
    C = n_classes if n_classes is not None else dataset.n_classes
    R = n_predicates if n_predicates is not None else dataset.n_predicates
    if not images:
        raise ValidationError("cannot build a prior from an empty dataset")
    if smoothing <= 0:
        raise ValidationError("smoothing must be positive")
    counts = np.zeros((C, C, R))
    for ann in images:
        for s, r, o in ann.triplets:
            counts[ann.objects[s].class_id, ann.objects[o].class_id, r] += 1
    totals = counts.sum(axis=2, keepdims=True)
    return np.log((counts + smoothing) / (totals + smoothing * R))


# ---------------------------------------------------------------- forward

@dataclass
class ModuleScores:
    f_spt: np.ndarray
    f_vis: np.ndarray
    f_sem: np.ndarray
    hidden_spatial_final: Optional[np.ndarray] = None
    hidden_spatial_prefinal: Optional[np.ndarray] = None
    hidden_visual_final: Optional[np.ndarray] = None
    hidden_visual_prefinal: Optional[np.ndarray] = None
    caches: dict = field(default_factory=dict, repr=False)

    @property
    def logits(self) -> np.ndarray:
        return self.f_spt + self.f_vis + self.f_sem


@dataclass
class HeadOutputs:
    relpos: Optional[np.ndarray] = None
    dist_spt: Optional[np.ndarray] = None
    dist_vis: Optional[np.ndarray] = None
    iou: Optional[np.ndarray] = None
    caches: dict = field(default_factory=dict, repr=False)


def relation_feature(sub_feat: np.ndarray, obj_feat: np.ndarray) -> np.ndarray:
    """Relation ROI stand-in: elementwise max over the pair (union-region pooling)."""
    return np.maximum(sub_feat, obj_feat)


def visual_input(sub_feat, obj_feat, rel_feat=None) -> np.ndarray:
    sub_feat = np.atleast_2d(np.asarray(sub_feat, dtype=np.float64))
    obj_feat = np.atleast_2d(np.asarray(obj_feat, dtype=np.float64))
    if rel_feat is None:
        rel_feat = relation_feature(sub_feat, obj_feat)
    rel_feat = np.atleast_2d(np.asarray(rel_feat, dtype=np.float64))
    return np.concatenate([sub_feat, obj_feat, rel_feat], axis=1)


def forward(params: ModelParams, x_spt, x_vis, sub_class, obj_class) -> ModuleScores:
    """Score a batch of pairs.

    ``x_spt`` is ``(n, 22)``; ``x_vis`` is ``(n, 3 * d_vis)`` (see
    :func:`visual_input`) or ``None`` when the visual module is disabled.
    """
    x_spt = np.atleast_2d(np.asarray(x_spt, dtype=np.float64))
    sub_class = np.atleast_1d(np.asarray(sub_class, dtype=np.int64))
    obj_class = np.atleast_1d(np.asarray(obj_class, dtype=np.int64))
    n, R = len(x_spt), params.n_predicates
    if x_spt.shape[1] != 22:
        raise ConfigurationError(f"spatial feature has {x_spt.shape[1]} entries, expected 22")
    if len(sub_class) != n or len(obj_class) != n:
        raise ConfigurationError("class id arrays must match the number of pairs")
    if np.any((sub_class < 0) | (sub_class >= params.n_classes)
              | (obj_class < 0) | (obj_class >= params.n_classes)):
        raise ConfigurationError("class id out of range")
    scores = ModuleScores(np.zeros((n, R)), np.zeros((n, R)),
                          params.semantic_logprior[sub_class, obj_class])
    if params.use_spatial:
        c = mlp_forward(params.specs["spatial"], params.layers["spatial"], x_spt)
        scores.caches["spatial"] = c
        scores.f_spt = c["out"]
        scores.hidden_spatial_final = c["act"][-1]
        scores.hidden_spatial_prefinal = c["act"][-2]
    if params.use_visual:
        if x_vis is None:
            raise ConfigurationError("visual module enabled but no ROI features given")
        x_vis = np.atleast_2d(np.asarray(x_vis, dtype=np.float64))
        if x_vis.shape != (n, 3 * params.d_vis):
            raise ConfigurationError(
                f"visual input shape {x_vis.shape} != {(n, 3 * params.d_vis)}")
        c = mlp_forward(params.specs["visual"], params.layers["visual"], x_vis)
        scores.caches["visual"] = c
        scores.f_vis = c["out"]
        scores.hidden_visual_final = c["act"][-1]
        scores.hidden_visual_prefinal = c["act"][-2]
    return scores


def combine_predict(scores: ModuleScores) -> np.ndarray:
    """Row-wise softmax of the summed module scores."""
    z = scores.logits if isinstance(scores, ModuleScores) else np.asarray(scores, dtype=np.float64)
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def _head_input(scores: ModuleScores, head: str) -> np.ndarray:
    trunk, back = HEAD_SOURCES[head]
    return scores.caches[trunk]["act"][-1 - back]


def aux_heads(params: ModelParams, scores: ModuleScores) -> HeadOutputs:
    out = HeadOutputs()
    for head in HEADS:
        if head not in params.layers or HEAD_SOURCES[head][0] not in scores.caches:
            continue
        c = mlp_forward(params.specs[head], params.layers[head], _head_input(scores, head))
        out.caches[head] = c
        y = c["out"]
        setattr(out, head, y if head == "relpos" else y[:, 0])
    return out


# ----------------------------------------------------------------- losses

def bce_multilabel(x, y, eps: float = BCE_EPS) -> float:
    x = np.clip(np.atleast_2d(np.asarray(x, dtype=np.float64)), eps, 1.0 - eps)
    y = np.atleast_2d(np.asarray(y, dtype=np.float64))
    n = len(x)
    return float(-np.sum(y * np.log(x) + (1.0 - y) * np.log(1.0 - x)) / n)


def mse(x, y) -> float:
    x = np.atleast_1d(np.asarray(x, dtype=np.float64))
    y = np.atleast_1d(np.asarray(y, dtype=np.float64))
    return float(np.sum((x - y) ** 2) / len(x))


def cross_entropy(p, gt) -> float:
    """Mean ``-ln p[gt]`` over rows with ``gt >= 0``; rows marked -1 carry no label."""
    p = np.atleast_2d(p)
    gt = np.atleast_1d(np.asarray(gt, dtype=np.int64))
    mask = gt >= 0
    if not mask.any():
        return 0.0
    picked = p[np.flatnonzero(mask), gt[mask]]
    return float(-np.mean(np.log(np.maximum(picked, np.finfo(float).tiny))))


@dataclass
class LossBreakdown:
    L0: float
    L_task1: float
    L_task2: float
    L_task3: float
    L_task4: float
    L: float
    n: int
    weights: tuple = DEFAULT_WEIGHTS

    @property
    def tasks(self) -> tuple:
        return (self.L_task1, self.L_task2, self.L_task3, self.L_task4)

    def as_row(self) -> list[float]:
        return [self.L0, *self.tasks, self.L]


def _labels_arrays(labels) -> dict:
    if isinstance(labels, dict):
        return {k: np.asarray(v, dtype=np.float64) for k, v in labels.items()}
    labels = list(labels)
    return {"relpos": np.array([l.relpos for l in labels], dtype=np.float64).reshape(-1, 2),
            "distance": np.array([l.distance for l in labels], dtype=np.float64),
            "iou": np.array([l.iou for l in labels], dtype=np.float64)}


def total_loss(p, gt_predicates, heads: HeadOutputs, labels,
               weights: Sequence[float] = DEFAULT_WEIGHTS) -> LossBreakdown:
    """Cross-entropy plus the weighted auxiliary losses.

    Heads that are absent (module disabled) contribute a zero term.
    """
    p = np.atleast_2d(p)
    n = len(p)
    if n == 0:
        raise ValidationError("empty batch")
    lab = _labels_arrays(labels)
    w = tuple(float(v) for v in weights)
    if len(w) != 4 or any(v < 0 for v in w):
        raise ValidationError(f"need four non-negative loss weights, got {weights}")
    L0 = cross_entropy(p, gt_predicates)
    t1 = bce_multilabel(heads.relpos, lab["relpos"]) if heads.relpos is not None else 0.0
    t2 = mse(heads.dist_spt, lab["distance"]) if heads.dist_spt is not None else 0.0
    t3 = mse(heads.iou, lab["iou"]) if heads.iou is not None else 0.0
    t4 = mse(heads.dist_vis, lab["distance"]) if heads.dist_vis is not None else 0.0
    L = L0 + w[0] * t1 + w[1] * t2 + w[2] * t3 + w[3] * t4
    return LossBreakdown(L0, t1, t2, t3, t4, L, n, w)


# --------------------------------------------------------------- backward

@dataclass
class PairBatch:
    """Model inputs and targets for a set of subject/object pairs."""

    x_spt: np.ndarray
    x_vis: Optional[np.ndarray]
    sub_class: np.ndarray
    obj_class: np.ndarray
    gt: np.ndarray  # predicate id, -1 for unlabelled pairs
    relpos: np.ndarray
    distance: np.ndarray
    iou: np.ndarray

    def __len__(self):
        return len(self.x_spt)

    @property
    def labels(self) -> dict:
        return {"relpos": self.relpos, "distance": self.distance, "iou": self.iou}

    @classmethod
    def concat(cls, batches: Sequence["PairBatch"]) -> "PairBatch":
        def cat(name):
            parts = [getattr(b, name) for b in batches]
            if any(v is None for v in parts):
                return None
            return np.concatenate(parts)
        return cls(*(cat(n) for n in ("x_spt", "x_vis", "sub_class", "obj_class", "gt",
                                       "relpos", "distance", "iou")))

    def take(self, idx) -> "PairBatch":
        return PairBatch(self.x_spt[idx], None if self.x_vis is None else self.x_vis[idx],
                         self.sub_class[idx], self.obj_class[idx], self.gt[idx],
                         self.relpos[idx], self.distance[idx], self.iou[idx])


def evaluate_batch(params: ModelParams, batch: PairBatch,
                   weights: Sequence[float] = DEFAULT_WEIGHTS):
    scores = forward(params, batch.x_spt, batch.x_vis, batch.sub_class, batch.obj_class)
    p = combine_predict(scores)
    heads = aux_heads(params, scores)
    loss = total_loss(p, batch.gt, heads, batch.labels, weights)
    return loss, scores, p, heads


def loss_and_grad(params: ModelParams, batch: PairBatch,
                  weights: Sequence[float] = DEFAULT_WEIGHTS):
    """Total loss and its exact gradient for every trainable tensor.

    Returns ``(LossBreakdown, grads)`` where ``grads[net]`` mirrors
    ``params.layers[net]`` as ``[[dW, db], ...]``.
    """
    loss, scores, p, heads = evaluate_batch(params, batch, weights)
    w = loss.weights
    n = len(batch)
    lab = batch.labels

    gt = np.asarray(batch.gt, dtype=np.int64)
    mask = gt >= 0
    m = int(mask.sum())
    d_logits = np.zeros_like(p)
    if m:
        rows = np.flatnonzero(mask)
        d_logits[rows] = p[rows]
        d_logits[rows, gt[mask]] -= 1.0
        d_logits /= m

    head_grads = {}
    if heads.relpos is not None:
        x = heads.relpos
        y = lab["relpos"]
        xc = np.clip(x, BCE_EPS, 1.0 - BCE_EPS)
        inside = (x >= BCE_EPS) & (x <= 1.0 - BCE_EPS)
        head_grads["relpos"] = w[0] * inside * (-(y / xc) + (1.0 - y) / (1.0 - xc)) / n
    for head, weight, target in (("dist_spt", w[1], "distance"), ("iou", w[2], "iou"),
                                 ("dist_vis", w[3], "distance")):
        out = getattr(heads, head)
        if out is not None:
            head_grads[head] = (weight * 2.0 * (out - lab[target]) / n)[:, None]

    grads = {}
    injected = {"spatial": {}, "visual": {}}
    for head, d_out in head_grads.items():
        g, d_in = mlp_backward(params.specs[head], params.layers[head], heads.caches[head], d_out)
        grads[head] = g
        trunk, back = HEAD_SOURCES[head]
        n_hidden = params.specs[trunk].n_layers - 1
        idx = n_hidden - back
        prev = injected[trunk].get(idx)
        injected[trunk][idx] = d_in if prev is None else prev + d_in
    for trunk in TRUNKS:
        if trunk in scores.caches:
            g, _ = mlp_backward(params.specs[trunk], params.layers[trunk],
                                scores.caches[trunk], d_logits, injected[trunk])
            grads[trunk] = g
    return loss, grads


def min_abs_preactivation(params: ModelParams, batch: PairBatch) -> float:
    """Smallest |pre-activation| over every rectifier unit for ``batch``."""
    scores = forward(params, batch.x_spt, batch.x_vis, batch.sub_class, batch.obj_class)
    heads = aux_heads(params, scores)
    caches = list(scores.caches.values()) + list(heads.caches.values())
    vals = [np.abs(z).min() for c in caches for z in c["pre"][:-1]]
    return float(min(vals)) if vals else np.inf


# ------------------------------------------------------------- checkpoint

_ZIP_DATE = (1980, 1, 1, 0, 0, 0)


def save_checkpoint(params: ModelParams, path, extra: Optional[dict] = None) -> None:
    """Write a zip holding ``meta.json`` plus one ``.npy`` member per tensor.

    Member timestamps are fixed so identical parameters give identical bytes.
    """
    meta = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "n_classes": params.n_classes,
        "n_predicates": params.n_predicates,
        "d_vis": params.d_vis,
        "seed": params.seed,
        "use_spatial": params.use_spatial,
        "use_visual": params.use_visual,
        "specs": {k: v.to_dict() for k, v in sorted(params.specs.items())},
        "tensors": [name for name, _ in params.named_arrays()] + ["semantic_logprior"],
        "extra": extra or {},
    }
    arrays = dict(params.named_arrays())
    arrays["semantic_logprior"] = params.semantic_logprior

    def member(zf, name, payload: bytes):
        info = zipfile.ZipInfo(name, date_time=_ZIP_DATE)
        info.compress_type = zipfile.ZIP_STORED
        info.external_attr = 0o644 << 16
        zf.writestr(info, payload)

    with zipfile.ZipFile(path, "w") as zf:
        member(zf, "meta.json", json.dumps(meta, indent=1, sort_keys=True).encode())
        for name in meta["tensors"]:
            buf = io.BytesIO()
            np.lib.format.write_array(buf, np.ascontiguousarray(arrays[name], dtype="<f8"),
                                      allow_pickle=False)
            member(zf, name + ".npy", buf.getvalue())


def load_checkpoint(path) -> ModelParams:
    with zipfile.ZipFile(path) as zf:
        meta = json.loads(zf.read("meta.json"))
        if meta.get("format") != CHECKPOINT_FORMAT:
            raise ValidationError(f"{path}: not a checkpoint file")
        tensors = {name: np.lib.format.read_array(io.BytesIO(zf.read(name + ".npy")),
                                                  allow_pickle=False)
                   for name in meta["tensors"]}
    specs = {k: MlpSpec.from_dict(v) for k, v in meta["specs"].items()}
    layers = {}
    for net, spec in specs.items():
        layers[net] = [[tensors[f"{net}.{i}.W"], tensors[f"{net}.{i}.b"]]
                       for i in range(spec.n_layers)]
    return ModelParams(specs, layers, tensors["semantic_logprior"], meta["n_classes"],
                       meta["n_predicates"], meta["d_vis"], meta["seed"],
                       meta["use_spatial"], meta["use_visual"])


def checkpoint_extra(path) -> dict:
    with zipfile.ZipFile(path) as zf:
        return json.loads(zf.read("meta.json")).get("extra", {})
