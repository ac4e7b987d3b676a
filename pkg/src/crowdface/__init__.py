"""Crowd-consensus regression models of perceived face attributes.

Turns raw crowd Likert judgements of face images into trained convolutional
regressors of consensus perception, with hyperparameter search, R^2
evaluation, occlusion-based explanation, and per-frame sequence scoring.
"""

__version__ = "0.1.0"

from . import dataset, explain, model, presets, ratings, search, stream
from .dataset import (
    AugmentationConfig,
    DataSplit,
    FaceImage,
    ScoredImages,
    align_face,
    augment,
    generate_synthetic,
    make_split,
)
from .model import (
    ArchitectureConfig,
    EvalReport,
    Model,
    TrainedModel,
    TrainingConfig,
    build,
    evaluate,
    load,
    predict,
    save,
    train,
    zscore,
)
from .presets import PRESETS, get_preset
from .ratings import (
    ConsensusScore,
    RatingRecord,
    ReliabilityReport,
    TraitStats,
    aggregate,
    normalize_likert,
    split_half_reliability,
    squared_pearson,
    trait_stats,
)

__all__ = [
    "__version__",
    "dataset", "explain", "model", "presets", "ratings", "search", "stream",
    "AugmentationConfig", "DataSplit", "FaceImage", "ScoredImages",
    "align_face", "augment", "generate_synthetic", "make_split",
    "ArchitectureConfig", "EvalReport", "Model", "TrainedModel",
    "TrainingConfig", "build", "evaluate", "load", "predict", "save",
    "train", "zscore",
    "PRESETS", "get_preset",
    "ConsensusScore", "RatingRecord", "ReliabilityReport", "TraitStats",
    "aggregate", "normalize_likert", "split_half_reliability",
    "squared_pearson", "trait_stats",
]
