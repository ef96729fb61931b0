"""Alcohol-influence trip classifier: features, SMOTE balancing, CART tree."""

from .features import FEATURE_NAMES, InsufficientDataError, Label, TripFeatures, extract_features
from .smote import CannotOversampleError, LabeledDataset, TrainConfig, smote_balance
from .tree import (
    DecisionTreeModel,
    Leaf,
    ModelIntegrityError,
    ModelLoadError,
    Split,
    UnsupportedVersionError,
    best_split,
    load_model,
    predict,
    save_model,
    train_tree,
)

__all__ = [
    "FEATURE_NAMES",
    "CannotOversampleError",
    "DecisionTreeModel",
    "InsufficientDataError",
    "Label",
    "LabeledDataset",
    "Leaf",
    "ModelIntegrityError",
    "ModelLoadError",
    "Split",
    "TrainConfig",
    "TripFeatures",
    "UnsupportedVersionError",
    "best_split",
    "extract_features",
    "load_model",
    "predict",
    "save_model",
    "smote_balance",
    "train_tree",
]
