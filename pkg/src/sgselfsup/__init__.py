"""Scene-graph relationship classification with geometric self-supervision."""
from .data import (Dataset, Detection, DetectionSet, ImageMeta, ObjectInstance,
                   PredicateTaxonomy, SceneGraphAnnotation)
from .estimator import RelationshipClassifier
from .evaluation import alpha_curve, evaluate, nontrivial_count, predict_dataset
from .geometry import BoundingBox, ValidationError, centroid, centroid_distance, iou, union_box
from .model import init_params, load_checkpoint, save_checkpoint
from .selfsup import SelfSupLabeler, SelfSupLabels, labels_for_pair
from .spatial import SpatialFeatureTransformer, delta_box, normalized_box, spatial_feature
from .synth import SynthConfig, generate
from .trainer import TrainConfig, train

__version__ = "0.1.0"

__all__ = [
    "BoundingBox", "Dataset", "Detection", "DetectionSet", "ImageMeta", "ObjectInstance",
    "PredicateTaxonomy", "RelationshipClassifier", "SceneGraphAnnotation", "SelfSupLabeler",
    "SelfSupLabels", "SpatialFeatureTransformer", "SynthConfig", "TrainConfig",
    "ValidationError", "alpha_curve", "centroid", "centroid_distance", "delta_box", "evaluate",
    "generate", "init_params", "iou", "labels_for_pair", "load_checkpoint", "nontrivial_count",
    "normalized_box", "predict_dataset", "save_checkpoint", "spatial_feature", "train",
    "union_box",
]
