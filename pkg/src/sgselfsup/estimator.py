"""scikit-learn style front end for the relationship classifier."""
from __future__ import annotations

from typing import Optional

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.exceptions import NotFittedError
from sklearn.utils.validation import check_is_fitted

from .data import Dataset, DetectionSet, SceneGraphAnnotation
from .evaluation import PREDCLS, evaluate, predict_dataset, predict_image
from .model import ModelParams, load_checkpoint, save_checkpoint
from .trainer import TrainConfig, train


class RelationshipClassifier(ClassifierMixin, BaseEstimator):
    """Spatial + visual + frequency-prior predicate classifier with auxiliary
    self-supervision heads, trained by plain SGD.

    ``fit`` takes a :class:`~sgselfsup.data.Dataset`; prediction works per
    image and returns one probability row per ordered object pair.

    Parameters mirror :class:`~sgselfsup.trainer.TrainConfig`.
    """

    def __init__(self, learning_rate=0.005, epochs=10, pairs_per_image=512,
                 loss_weights=(1.0, 1.0, 1.0, 1.0), seed=0, batch_images=4, lr_decay=1.0,
                 prior_smoothing=1.0, use_spatial=True, use_visual=True,
                 spatial_hidden=(64, 64), visual_hidden=(128, 64), relpos_hidden=(32,),
                 scalar_hidden=(32, 16)):
        self.learning_rate = learning_rate
        self.epochs = epochs
        self.pairs_per_image = pairs_per_image
        self.loss_weights = loss_weights
        self.seed = seed
        self.batch_images = batch_images
        self.lr_decay = lr_decay
        self.prior_smoothing = prior_smoothing
        self.use_spatial = use_spatial
        self.use_visual = use_visual
        self.spatial_hidden = spatial_hidden
        self.visual_hidden = visual_hidden
        self.relpos_hidden = relpos_hidden
        self.scalar_hidden = scalar_hidden

    def _config(self) -> TrainConfig:
        return TrainConfig(**self.get_params())

    def fit(self, X: Dataset, y=None):
        if not isinstance(X, Dataset):
            raise TypeError(f"fit expects a Dataset, got {type(X).__name__}")
        self.report_, self.params_ = train(X, self._config())
        self._set_meta(X)
        return self

    def partial_fit(self, X: Dataset, y=None, epochs: int = 1):
        """Continue training from the current parameters (or start fresh)."""
        cfg = self._config()
        cfg.epochs = epochs
        params = getattr(self, "params_", None)
        if params is not None:
            # fresh shuffles per call; the init seed is irrelevant once params exist
            cfg.seed = self.seed + len(self.report_.epochs)
        report, self.params_ = train(X, cfg, params)
        if hasattr(self, "report_"):
            self.report_.epochs += report.epochs
            self.report_.seconds += report.seconds
        else:
            self.report_ = report
        self._set_meta(X)
        return self

    def _set_meta(self, X: Dataset):
        self.taxonomy_ = X.taxonomy
        self.classes_ = np.arange(X.n_predicates)
        self.n_object_classes_ = X.n_classes

    def predict_proba(self, X: SceneGraphAnnotation, mode: str = PREDCLS,
                      detections: Optional[DetectionSet] = None) -> np.ndarray:
        """``(n_pairs, R)`` predicate probabilities for every ordered pair of ``X``."""
        check_is_fitted(self, "params_")
        preds = predict_image(self.params_, X, mode, detections)
        if not preds:
            return np.zeros((0, len(self.classes_)))
        return np.stack([p.p_rel for p in preds])

    def predict(self, X: SceneGraphAnnotation, mode: str = PREDCLS,
                detections: Optional[DetectionSet] = None) -> list[tuple[int, int, int]]:
        """Top-1 ``(subject, predicate, object)`` for every ordered pair."""
        check_is_fitted(self, "params_")
        return [(p.sub_idx, p.predicate, p.obj_idx)
                for p in predict_image(self.params_, X, mode, detections)]

    def predict_dataset(self, X: Dataset, mode: str = PREDCLS,
                        detections: Optional[DetectionSet] = None, with_features=False) -> dict:
        check_is_fitted(self, "params_")
        return predict_dataset(self.params_, X, mode, detections, with_features)

    def score(self, X: Dataset, y=None, k: int = 20) -> float:
        """PREDCLS recall@k (macro over images)."""
        report = evaluate(X, self.predict_dataset(X), PREDCLS, (k,))
        return report.recall[k]

    def save(self, path) -> None:
        check_is_fitted(self, "params_")
        save_checkpoint(self.params_, path, extra={"estimator": self.get_params()})

    @classmethod
    def from_params(cls, params: ModelParams, taxonomy=None, **kwargs) -> "RelationshipClassifier":
        est = cls(use_spatial=params.use_spatial, use_visual=params.use_visual, seed=params.seed,
                  **kwargs)
        est.params_ = params
        est.classes_ = np.arange(params.n_predicates)
        est.n_object_classes_ = params.n_classes
        if taxonomy is not None:
            est.taxonomy_ = taxonomy
        return est

    @classmethod
    def load(cls, path) -> "RelationshipClassifier":
        return cls.from_params(load_checkpoint(path))

    def __sklearn_is_fitted__(self):
        return hasattr(self, "params_")


__all__ = ["RelationshipClassifier", "NotFittedError"]
