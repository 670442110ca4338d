"""Panoramic activity recognition on synthetic scenes.

Spatio-temporal proximity relation encoding, social group detection, and a
dual-path multi-granular activity transformer, trained end to end on a
seeded synthetic panoramic scene generator.
"""

from .tensor import Tensor, grad_check, set_debug_checks
from .geometry import giou, tgiou, euclid_proximity, proximity_matrix
from .relation import (
    GroupAssignment,
    PanoramicEmbedding,
    kmeans_groups,
    kmeans_labels,
    roi_align,
)
from .model import ActivityModel, ModelConfig
from .synthdata import SceneSample, SceneSpec, generate_scene, read_dataset, write_dataset
from .training import LossWeights, TrainConfig, train
from .evaluation import evaluate, group_detection_scores, match_groups, multilabel_prf

__version__ = "0.1.0"

__all__ = [
    "ActivityModel", "GroupAssignment", "LossWeights", "ModelConfig",
    "PanoramicEmbedding", "SceneSample", "SceneSpec", "Tensor", "TrainConfig",
    "euclid_proximity", "evaluate", "generate_scene", "giou",
    "grad_check", "group_detection_scores", "kmeans_groups", "kmeans_labels",
    "match_groups", "multilabel_prf", "proximity_matrix", "read_dataset",
    "roi_align", "set_debug_checks", "tgiou", "train", "write_dataset",
]
