"""Crowdsourced label aggregation and ambiguous-task pruning.

The package aggregates crowd votes (MV, NS, DS, WDS, GLAD), scores tasks by
margin statistics recorded while training a small classifier (AUM, AUMC,
WAUM, worker-wise WAUM), prunes the lowest-scoring tasks and evaluates the
downstream classifier with accuracy and expected calibration error.
"""

from waumkit.data import (
    CrowdDataset,
    DatasetFormatError,
    DimensionError,
    ValidationError,
    annotator_sets,
    load_dataset,
    save_dataset,
    tasks_sets,
)
from waumkit.aggregation import (
    DsState,
    EmConfig,
    aggregate_to_targets,
    dawid_skene,
    majority_vote,
    naive_soft,
    weighted_ds,
)
from waumkit.glad import GladConfig, GladState, glad
from waumkit.trainer import (
    MarginTrace,
    MlpSpec,
    NumericalError,
    TrainConfig,
    margin,
    predict_proba,
    train_with_trace,
)
from waumkit.identification import (
    IdentificationReport,
    aum_per_vote,
    aumc,
    entropy_per_task,
    identify,
    prune,
    trust_scores,
    waum,
    waum_worker_wise,
)
from waumkit.metrics import EceConfig, accuracy, ece

__version__ = "0.1.0"

__all__ = [
    "CrowdDataset",
    "DatasetFormatError",
    "DimensionError",
    "DsState",
    "EceConfig",
    "EmConfig",
    "GladConfig",
    "GladState",
    "IdentificationReport",
    "MarginTrace",
    "MlpSpec",
    "NumericalError",
    "TrainConfig",
    "ValidationError",
    "accuracy",
    "aggregate_to_targets",
    "annotator_sets",
    "aum_per_vote",
    "aumc",
    "dawid_skene",
    "ece",
    "entropy_per_task",
    "glad",
    "identify",
    "load_dataset",
    "majority_vote",
    "margin",
    "naive_soft",
    "predict_proba",
    "prune",
    "save_dataset",
    "tasks_sets",
    "train_with_trace",
    "trust_scores",
    "waum",
    "waum_worker_wise",
    "weighted_ds",
]
