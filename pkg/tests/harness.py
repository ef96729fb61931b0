"""End-to-end helpers shared by the synth, classifier and acceptance tests."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from drivefeedback.classifier import Label, LabeledDataset, TripFeatures, extract_features
from drivefeedback.events import UnsafeEvent, detect_events
from drivefeedback.segmenter import Trip, segment_trace
from drivefeedback.synth import GroundTruthManifest, InjectedEvent, ScenarioConfig, generate_corpus
from drivefeedback.telemetry import clean_stream, derive_kinematics


def corpus_trips(cfg: ScenarioConfig) -> tuple[list[Trip], GroundTruthManifest]:
    logs, manifest = generate_corpus(cfg)
    trips: list[Trip] = []
    for driver, samples in sorted(logs.items()):
        segments, _ = clean_stream(samples)
        trips.extend(segment_trace([derive_kinematics(s) for s in segments], driver_id=driver))
    return trips, manifest


@dataclass
class MatchResult:
    injected: int
    detected: int
    recalled: int
    precise: int
    missed: list[InjectedEvent]
    spurious: list[UnsafeEvent]

    @property
    def recall(self) -> float:
        return self.recalled / self.injected if self.injected else 1.0

    @property
    def precision(self) -> float:
        return self.precise / self.detected if self.detected else 1.0


def _overlaps(a0: float, a1: float, b0: float, b1: float, slack: float = 1.0) -> bool:
    return a0 <= b1 + slack and b0 <= a1 + slack


def match_events(events: list[UnsafeEvent], manifest: GroundTruthManifest) -> MatchResult:
    """Pair detections with injections of the same kind whose spans overlap."""
    injected = manifest.events()
    by_kind: dict = {}
    for e in events:
        by_kind.setdefault(e.kind, []).append(e)
    missed = [
        inj for inj in injected
        if not any(_overlaps(inj.start_ts, inj.end_ts, e.start_ts, e.end_ts) for e in by_kind.get(inj.kind, []))
    ]
    inj_by_kind: dict = {}
    for inj in injected:
        inj_by_kind.setdefault(inj.kind, []).append(inj)
    spurious = [
        e for e in events
        if not any(_overlaps(i.start_ts, i.end_ts, e.start_ts, e.end_ts) for i in inj_by_kind.get(e.kind, []))
    ]
    return MatchResult(len(injected), len(events), len(injected) - len(missed), len(events) - len(spurious), missed, spurious)


def detect_all(trips: list[Trip]) -> list[UnsafeEvent]:
    return [e for t in trips for e in detect_events(t)]


def labeled_rows(trips: list[Trip], manifest: GroundTruthManifest, tz_offset: float = 1.0) -> list[tuple[TripFeatures, Label]]:
    rows = []
    for t in trips:
        truth = manifest.truth_for(t.driver_id, t.start_ts, t.end_ts)
        assert truth is not None, f"trip {t.trip_id} has no manifest entry"
        rows.append((extract_features(t, tz_offset), Label.INFLUENCED if truth.influenced else Label.SOBER))
    return rows


def stratified_split(rows: list, holdout: float = 0.3, seed: int = 0) -> tuple[LabeledDataset, LabeledDataset]:
    rng = np.random.default_rng(seed)
    train, test = [], []
    for label in Label:
        group = [r for r in rows if r[1] is label]
        order = rng.permutation(len(group))
        n_test = int(round(holdout * len(group)))
        test += [group[i] for i in order[:n_test]]
        train += [group[i] for i in order[n_test:]]
    return LabeledDataset(train), LabeledDataset(test)
