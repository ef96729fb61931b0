"""Pipeline configuration file (JSON). Unknown keys are rejected."""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Any

from .backends import (
    DEFAULT_CONCURRENCY,
    DEFAULT_TIMEOUT,
    ENDPOINT_ENV,
    BackendError,
    BoundedBackend,
    GenerationBackend,
    HttpBackend,
    UnavailableBackend,
)
from .classifier.smote import TrainConfig
from .errors import ValidationError
from .events import EventKind, ThresholdProfile
from .reports import DEFAULT_BANNED_PHRASES, DEFAULT_PEER_RATES, ReportModels
from .segmenter import SegmenterConfig
from .stubs import StubBackend
from .telemetry import DEFAULT_MAX_GAP

BACKEND_KINDS = ("auto", "none", "stub", "http")


@dataclass(frozen=True)
class BackendSpec:
    kind: str = "auto"
    draft_model_id: str = "draft-model"
    refine_model_id: str = "refine-model"
    tip_model_id: str = "tip-model"
    concurrency: int = DEFAULT_CONCURRENCY
    timeout: float = DEFAULT_TIMEOUT

    def __post_init__(self) -> None:
        if self.kind not in BACKEND_KINDS:
            raise ValidationError(f"backend kind must be one of {BACKEND_KINDS}")
        if self.concurrency < 1 or self.timeout <= 0:
            raise ValidationError("backend concurrency and timeout must be positive")

    @property
    def models(self) -> ReportModels:
        return ReportModels(self.draft_model_id, self.refine_model_id)

    def build(self) -> GenerationBackend:
        kind = self.kind
        if kind == "auto":
            kind = "http" if os.environ.get(ENDPOINT_ENV) else "none"
        if kind == "none":
            inner: GenerationBackend = UnavailableBackend()
        elif kind == "stub":
            inner = StubBackend()
        else:
            try:
                inner = HttpBackend.from_env(timeout=self.timeout)
            except BackendError as exc:
                inner = UnavailableBackend(str(exc))
        return BoundedBackend(inner, self.concurrency, self.timeout)


@dataclass
class PipelineConfig:
    segmenter: SegmenterConfig = field(default_factory=SegmenterConfig)
    thresholds: ThresholdProfile = field(default_factory=ThresholdProfile)
    train: TrainConfig = field(default_factory=TrainConfig)
    backend: BackendSpec = field(default_factory=BackendSpec)
    corpus_path: Path | None = None
    model_path: Path = Path("model.json")
    store_path: Path = Path("drivefeedback.db")
    tz_offset: float = 1.0
    max_gap: float = DEFAULT_MAX_GAP
    peer_rates: dict[EventKind, float] = field(default_factory=lambda: dict(DEFAULT_PEER_RATES))
    banned_phrases: tuple[str, ...] = DEFAULT_BANNED_PHRASES


def _section(cls, raw: Any, name: str):
    if not isinstance(raw, dict):
        raise ValidationError(f"config section {name!r} must be an object")
    known = {f.name for f in fields(cls)}
    unknown = set(raw) - known
    if unknown:
        raise ValidationError(f"unknown keys in {name!r}: {sorted(unknown)}")
    try:
        return cls(**raw)
    except TypeError as exc:
        raise ValidationError(f"bad {name!r} section: {exc}") from exc


def _resolve(base: Path, value: str) -> Path:
    p = Path(value).expanduser()
    return p if p.is_absolute() else base / p


def parse_config(doc: Any, base_dir: Path = Path(".")) -> PipelineConfig:
    if not isinstance(doc, dict):
        raise ValidationError("config root must be an object")
    known = {f.name for f in fields(PipelineConfig)}
    unknown = set(doc) - known
    if unknown:
        raise ValidationError(f"unknown config keys: {sorted(unknown)}")
    cfg = PipelineConfig()
    if "segmenter" in doc:
        cfg.segmenter = _section(SegmenterConfig, doc["segmenter"], "segmenter")
    if "thresholds" in doc:
        cfg.thresholds = _section(ThresholdProfile, doc["thresholds"], "thresholds")
    if "train" in doc:
        cfg.train = _section(TrainConfig, doc["train"], "train")
    if "backend" in doc:
        cfg.backend = _section(BackendSpec, doc["backend"], "backend")
    if doc.get("corpus_path") is not None:
        cfg.corpus_path = _resolve(base_dir, doc["corpus_path"])
        if not cfg.corpus_path.is_file():
            raise ValidationError(f"corpus_path {cfg.corpus_path} does not exist")
    for key in ("model_path", "store_path"):
        if key in doc:
            path = _resolve(base_dir, doc[key])
            if not path.parent.is_dir():
                raise ValidationError(f"{key} directory {path.parent} does not exist")
            setattr(cfg, key, path)
    for key in ("tz_offset", "max_gap"):
        if key in doc:
            if not isinstance(doc[key], (int, float)) or isinstance(doc[key], bool):
                raise ValidationError(f"{key} must be a number")
            setattr(cfg, key, float(doc[key]))
    if "peer_rates" in doc:
        try:
            cfg.peer_rates = {EventKind(k): float(v) for k, v in doc["peer_rates"].items()}
        except (ValueError, AttributeError, TypeError) as exc:
            raise ValidationError(f"bad peer_rates: {exc}") from exc
    if "banned_phrases" in doc:
        phrases = doc["banned_phrases"]
        if not isinstance(phrases, list) or not all(isinstance(p, str) for p in phrases):
            raise ValidationError("banned_phrases must be a list of strings")
        cfg.banned_phrases = tuple(phrases)
    return cfg


def load_config(path: str | Path | None) -> PipelineConfig:
    if path is None:
        return PipelineConfig()
    path = Path(path)
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
    except OSError as exc:
        raise ValidationError(f"cannot read config {path}: {exc}") from exc
    except ValueError as exc:
        raise ValidationError(f"config {path} is not valid JSON: {exc}") from exc
    return parse_config(doc, path.parent)
