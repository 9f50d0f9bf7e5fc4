"""Semi-supervised evolving fuzzy ensemble with partition-parallel training and fusion."""

from .annotation import Da3Config, TrainingBatch, assemble_training_batch, pseudo_label
from .config import ExperimentConfig, load_config
from .ensemble import Ensemble, detect_drift, ensemble_output, prune_learners
from .fusion import FusionConfig, fuse, merge_models, online_model_select, sim_angle, sim_distance
from .fuzzy_core import confidence, firing_strengths, hyperplane_distance, local_output
from .prequential import run_prequential
from .rule_evolution import BaseLearner, LearnerConfig, Rule
from .runtime import partition, test_distributed, train_distributed
from .serialization import deserialize_model, serialize_model

__all__ = [
    "BaseLearner", "Da3Config", "Ensemble", "ExperimentConfig", "FusionConfig", "LearnerConfig", "Rule",
    "TrainingBatch", "assemble_training_batch", "confidence", "deserialize_model", "detect_drift",
    "ensemble_output", "firing_strengths", "fuse", "hyperplane_distance", "load_config", "local_output",
    "merge_models", "online_model_select", "partition", "prune_learners", "pseudo_label",
    "run_prequential", "serialize_model", "sim_angle", "sim_distance", "test_distributed",
    "train_distributed",
]
