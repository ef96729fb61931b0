"""CART decision tree (Gini) with a portable JSON model format.

Split scores are compared as exact fractions so that genuinely tied
candidates resolve by the documented tie-break (lowest feature index, then
lowest threshold) rather than by float rounding.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from fractions import Fraction
from typing import Sequence, Union

from ..errors import DriveFeedbackError, ValidationError
from .features import FEATURE_NAMES, Label, TripFeatures
from .smote import LabeledDataset, TrainConfig, standardization

MODEL_VERSION = "1"
LABELS = (Label.INFLUENCED, Label.SOBER)


class ModelIntegrityError(DriveFeedbackError):
    pass


class ModelLoadError(ValidationError):
    pass


class UnsupportedVersionError(ModelLoadError):
    pass


@dataclass(frozen=True)
class Leaf:
    label: Label
    class_counts: dict[str, int]


@dataclass(frozen=True)
class Split:
    feature_index: int
    threshold: float
    left: int
    right: int


Node = Union[Leaf, Split]


@dataclass
class DecisionTreeModel:
    nodes: list[Node]
    train_config: TrainConfig = field(default_factory=TrainConfig)
    standardization: dict[str, list[float]] = field(default_factory=dict)
    feature_names: tuple[str, ...] = FEATURE_NAMES

    @property
    def seed(self) -> int:
        return self.train_config.seed

    def depth(self) -> int:
        def walk(i: int) -> int:
            node = self.nodes[i]
            if isinstance(node, Leaf):
                return 0
            return 1 + max(walk(node.left), walk(node.right))

        return walk(0)


def _weighted_purity(counts: Sequence[int]) -> Fraction:
    """sum(c^2)/n, the quantity whose maximisation minimises child Gini."""
    n = sum(counts)
    return Fraction(sum(c * c for c in counts), n) if n else Fraction(0)


def gini(counts: Sequence[int]) -> float:
    n = sum(counts)
    if n == 0:
        return 0.0
    return 1.0 - sum((c / n) ** 2 for c in counts)


def _label_counts(labels: Sequence[Label]) -> list[int]:
    return [sum(1 for y in labels if y is lab) for lab in LABELS]


def midpoint(lo: float, hi: float) -> float:
    mid = (lo + hi) / 2.0
    # adjacent floats: keep the threshold strictly above lo
    if not lo < mid <= hi:
        mid = hi
    return mid


@dataclass(frozen=True)
class SplitChoice:
    feature_index: int
    threshold: float
    gain: Fraction


def best_split(
    x: Sequence[Sequence[float]], y: Sequence[Label], min_samples_leaf: int
) -> SplitChoice | None:
    """Highest Gini decrease over every (feature, midpoint) candidate.

    Gain is expressed as n * impurity decrease, i.e. the exact fraction
    (children purity) - (parent purity). Candidates leaving fewer than
    ``min_samples_leaf`` rows on a side are skipped; only positive gains count.
    """
    n = len(y)
    total = _label_counts(y)
    parent = _weighted_purity(total)
    best: SplitChoice | None = None
    for f in range(len(FEATURE_NAMES)):
        order = sorted(range(n), key=lambda i: x[i][f])
        left = [0, 0]
        for pos in range(n - 1):
            i = order[pos]
            left[0 if y[i] is LABELS[0] else 1] += 1
            lo, hi = x[i][f], x[order[pos + 1]][f]
            if lo == hi:
                continue
            n_left = pos + 1
            if n_left < min_samples_leaf or n - n_left < min_samples_leaf:
                continue
            right = [total[0] - left[0], total[1] - left[1]]
            gain = _weighted_purity(left) + _weighted_purity(right) - parent
            if gain <= 0:
                continue
            # features ascend and thresholds ascend within a feature, so strict
            # improvement keeps the earliest candidate on ties
            if best is None or gain > best.gain:
                best = SplitChoice(f, midpoint(lo, hi), gain)
    return best


def _majority(counts: Sequence[int]) -> Label:
    # ties go to Influenced: a missed impaired trip is the costly error
    return LABELS[0] if counts[0] >= counts[1] else LABELS[1]


def train_tree(data: LabeledDataset, cfg: TrainConfig = TrainConfig()) -> DecisionTreeModel:
    if not len(data):
        raise ValidationError("cannot train on an empty dataset")
    x = [f.as_tuple() for f, _ in data.rows]
    y = data.labels()
    nodes: list[Node | None] = []

    def build(idx: list[int], depth: int) -> int:
        slot = len(nodes)
        nodes.append(None)
        labels = [y[i] for i in idx]
        counts = _label_counts(labels)
        choice = None
        if depth < cfg.max_depth and min(counts) > 0:
            choice = best_split([x[i] for i in idx], labels, cfg.min_samples_leaf)
        if choice is None:
            nodes[slot] = Leaf(_majority(counts), {lab.value: c for lab, c in zip(LABELS, counts)})
            return slot
        f, t = choice.feature_index, choice.threshold
        left = build([i for i in idx if x[i][f] < t], depth + 1)
        right = build([i for i in idx if x[i][f] >= t], depth + 1)
        nodes[slot] = Split(f, t, left, right)
        return slot

    build(list(range(len(y))), 0)
    mean, std = standardization(data.matrix())
    return DecisionTreeModel(
        nodes=nodes,  # type: ignore[arg-type]
        train_config=cfg,
        standardization={"mean": mean, "std": std},
    )


def predict(model: DecisionTreeModel, f: TripFeatures) -> tuple[Label, list[tuple[str, str, float]]]:
    """Descend the tree; the path lists every comparison taken."""
    values = f.as_tuple()
    path: list[tuple[str, str, float]] = []
    i = 0
    for _ in range(len(model.nodes) + 1):
        if not 0 <= i < len(model.nodes):
            raise ModelIntegrityError(f"dangling child reference {i}")
        node = model.nodes[i]
        if isinstance(node, Leaf):
            return node.label, path
        name = model.feature_names[node.feature_index]
        if values[node.feature_index] < node.threshold:
            path.append((name, "<", node.threshold))
            i = node.left
        else:
            path.append((name, "≥", node.threshold))
            i = node.right
    raise ModelIntegrityError("cycle detected in tree")


def _node_to_dict(node: Node) -> dict:
    if isinstance(node, Leaf):
        return {"type": "leaf", "label": node.label.value, "class_counts": dict(sorted(node.class_counts.items()))}
    return {
        "type": "split",
        "feature_index": node.feature_index,
        "threshold": node.threshold,
        "left": node.left,
        "right": node.right,
    }


def save_model(model: DecisionTreeModel) -> bytes:
    doc = {
        "version": MODEL_VERSION,
        "feature_names": list(model.feature_names),
        "standardization": model.standardization,
        "nodes": [_node_to_dict(n) for n in model.nodes],
        "train_config": asdict(model.train_config),
        "seed": model.seed,
    }
    return json.dumps(doc, sort_keys=True, indent=1, ensure_ascii=False).encode("utf-8")


def _check(cond: bool, msg: str) -> None:
    if not cond:
        raise ModelLoadError(msg)


def _is_int(v) -> bool:
    return isinstance(v, int) and not isinstance(v, bool)


def _node_from_dict(d: dict, n_nodes: int) -> Node:
    _check(isinstance(d, dict), "node must be an object")
    kind = d.get("type")
    if kind == "leaf":
        _check(set(d) == {"type", "label", "class_counts"}, "bad leaf fields")
        _check(d["label"] in {lab.value for lab in LABELS}, f"bad leaf label {d['label']!r}")
        counts = d["class_counts"]
        _check(isinstance(counts, dict) and all(_is_int(v) and v >= 0 for v in counts.values()), "bad class_counts")
        return Leaf(Label(d["label"]), dict(counts))
    if kind == "split":
        _check(set(d) == {"type", "feature_index", "threshold", "left", "right"}, "bad split fields")
        _check(_is_int(d["feature_index"]) and 0 <= d["feature_index"] < len(FEATURE_NAMES), "bad feature_index")
        _check(isinstance(d["threshold"], (int, float)) and not isinstance(d["threshold"], bool), "bad threshold")
        for side in ("left", "right"):
            _check(_is_int(d[side]) and 0 < d[side] < n_nodes, f"dangling {side} child {d[side]!r}")
        return Split(d["feature_index"], float(d["threshold"]), d["left"], d["right"])
    raise ModelLoadError(f"unknown node type {kind!r}")


def load_model(blob: bytes) -> DecisionTreeModel:
    """Parse a serialized model; never returns a partially valid tree."""
    try:
        doc = json.loads(blob.decode("utf-8"))
    except (UnicodeDecodeError, ValueError) as exc:
        raise ModelLoadError(f"model is not valid JSON: {exc}") from exc
    _check(isinstance(doc, dict), "model root must be an object")
    if doc.get("version") != MODEL_VERSION:
        raise UnsupportedVersionError(f"unsupported model version {doc.get('version')!r}")
    expected = {"version", "feature_names", "standardization", "nodes", "train_config", "seed"}
    _check(set(doc) == expected, f"model fields must be {sorted(expected)}")
    _check(doc["feature_names"] == list(FEATURE_NAMES), "feature_names mismatch")
    nodes_raw = doc["nodes"]
    _check(isinstance(nodes_raw, list) and nodes_raw, "nodes must be a non-empty list")
    nodes = [_node_from_dict(d, len(nodes_raw)) for d in nodes_raw]
    try:
        cfg = TrainConfig(**doc["train_config"])
    except (TypeError, ValidationError) as exc:
        raise ModelLoadError(f"bad train_config: {exc}") from exc
    _check(doc["seed"] == cfg.seed, "seed disagrees with train_config")
    std = doc["standardization"]
    _check(isinstance(std, dict) and set(std) <= {"mean", "std"}, "bad standardization block")
    model = DecisionTreeModel(nodes=nodes, train_config=cfg, standardization=std)
    _check_reachability(model)
    return model


def _check_reachability(model: DecisionTreeModel) -> None:
    seen: set[int] = set()
    stack = [0]
    while stack:
        i = stack.pop()
        if i in seen:
            raise ModelLoadError(f"node {i} reachable twice (cycle or shared child)")
        seen.add(i)
        node = model.nodes[i]
        if isinstance(node, Split):
            stack.extend((node.left, node.right))
    if len(seen) != len(model.nodes):
        raise ModelLoadError("model contains unreachable nodes")
