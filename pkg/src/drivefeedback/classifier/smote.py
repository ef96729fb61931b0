"""SMOTE minority oversampling over trip features.

Neighbour search runs on z-scored features with the hour compared on the
24 h circle. Interpolation happens in raw feature space, which is the same
convex combination as in standardized space; hour moves along the shorter arc.
"""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from ..errors import DriveFeedbackError, ValidationError
from .features import FEATURE_NAMES, HOUR_INDEX, Label, TripFeatures


class CannotOversampleError(DriveFeedbackError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    max_depth: int = 5
    min_samples_leaf: int = 2
    smote_k: int = 5
    seed: int = 0

    def __post_init__(self) -> None:
        if self.max_depth < 1 or self.min_samples_leaf < 1 or self.smote_k < 1:
            raise ValidationError("max_depth, min_samples_leaf and smote_k must be >= 1")


@dataclass
class LabeledDataset:
    rows: list[tuple[TripFeatures, Label]] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.rows)

    def counts(self) -> Counter:
        return Counter(label for _, label in self.rows)

    def matrix(self) -> np.ndarray:
        return np.array([f.as_tuple() for f, _ in self.rows], dtype=float).reshape(-1, len(FEATURE_NAMES))

    def labels(self) -> list[Label]:
        return [label for _, label in self.rows]


def standardization(x: np.ndarray) -> tuple[list[float], list[float]]:
    mean = x.mean(axis=0)
    std = x.std(axis=0)
    std[std == 0] = 1.0
    return mean.tolist(), std.tolist()


def pairwise_distances(x: np.ndarray, mean: Sequence[float], std: Sequence[float]) -> np.ndarray:
    diff = np.abs(x[:, None, :] - x[None, :, :])
    hour = diff[:, :, HOUR_INDEX]
    diff[:, :, HOUR_INDEX] = np.minimum(hour, 24.0 - hour)
    diff = diff / np.asarray(std)
    return np.sqrt((diff**2).sum(axis=2))


def _interpolate(x: np.ndarray, nn: np.ndarray, u: float) -> np.ndarray:
    new = x + u * (nn - x)
    dh = (nn[HOUR_INDEX] - x[HOUR_INDEX] + 12.0) % 24.0 - 12.0
    new[HOUR_INDEX] = (x[HOUR_INDEX] + u * dh) % 24.0
    return new


def smote_balance(data: LabeledDataset, cfg: TrainConfig = TrainConfig()) -> LabeledDataset:
    """Append synthetic minority rows until both classes have equal counts."""
    counts = data.counts()
    if len(counts) < 2:
        raise CannotOversampleError("both classes must be present to oversample")
    (major, n_major), (minor, n_minor) = sorted(
        counts.items(), key=lambda kv: (-kv[1], kv[0] != Label.INFLUENCED)
    )
    if n_major == n_minor:
        return data
    if n_minor < 2:
        raise CannotOversampleError("minority class needs at least 2 rows")

    x_all = data.matrix()
    mean, std = standardization(x_all)
    minority = x_all[[label == minor for label in data.labels()]]
    dist = pairwise_distances(minority, mean, std)
    np.fill_diagonal(dist, np.inf)
    k = min(cfg.smote_k, n_minor - 1)
    neighbours = np.argsort(dist, axis=1, kind="stable")[:, :k]

    rng = np.random.default_rng(cfg.seed)
    needed = n_major - n_minor
    order = rng.permutation(n_minor)
    synthetic: list[tuple[TripFeatures, Label]] = []
    for i in range(needed):
        base = order[i % n_minor]
        nn = neighbours[base, rng.integers(k)]
        u = rng.random()
        values = _interpolate(minority[base].copy(), minority[nn], u)
        synthetic.append((TripFeatures.from_sequence(values), minor))
    return LabeledDataset(list(data.rows) + synthetic)
