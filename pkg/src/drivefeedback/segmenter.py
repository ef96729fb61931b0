"""Debounced speed-based trip start/stop detection."""

from __future__ import annotations

import uuid
from dataclasses import dataclass, field
from typing import Iterable, Sequence, Union

from .errors import DriveFeedbackError, ValidationError
from .telemetry import KinematicSample, SensorSample

_TRIP_NAMESPACE = uuid.UUID("6f1c1f7e-3a55-4c2e-9d7e-2b8c2f1d0a11")


class OrderingError(DriveFeedbackError):
    """A sample arrived with a timestamp not after the previous one."""


@dataclass(frozen=True)
class SegmenterConfig:
    start_speed: float = 3.0
    start_hold: float = 30.0
    stop_speed: float = 1.0
    stop_hold: float = 180.0

    def __post_init__(self) -> None:
        if not self.start_speed > self.stop_speed > 0:
            raise ValidationError("segmenter requires start_speed > stop_speed > 0")
        if self.start_hold <= 0 or self.stop_hold <= 0:
            raise ValidationError("segmenter holds must be positive")


@dataclass(frozen=True)
class Idle:
    pass


@dataclass(frozen=True)
class PendingStart:
    since: float


@dataclass(frozen=True)
class Active:
    trip_start: float


@dataclass(frozen=True)
class PendingStop:
    trip_start: float
    since: float


Phase = Union[Idle, PendingStart, Active, PendingStop]


@dataclass(frozen=True)
class SegmenterState:
    phase: Phase = Idle()
    last_ts: float | None = None


@dataclass(frozen=True)
class TripStarted:
    ts: float


@dataclass(frozen=True)
class TripEnded:
    ts: float


Boundary = Union[TripStarted, TripEnded]


def step(
    state: SegmenterState, sample: KinematicSample, cfg: SegmenterConfig
) -> tuple[SegmenterState, Boundary | None]:
    """Advance the trip state machine by one sample.

    Start and end boundaries are backdated to the beginning of the pending
    window, so the samples that confirmed the transition belong to the trip.
    """
    ts, v = sample.ts, sample.speed
    if state.last_ts is not None and ts <= state.last_ts:
        raise OrderingError(f"sample at {ts} is not after {state.last_ts}")
    phase = state.phase
    boundary: Boundary | None = None

    if isinstance(phase, Idle):
        if v >= cfg.start_speed:
            phase = PendingStart(ts)
    elif isinstance(phase, PendingStart):
        if v < cfg.start_speed:
            phase = Idle()
        elif ts - phase.since >= cfg.start_hold:
            boundary = TripStarted(phase.since)
            phase = Active(phase.since)
    elif isinstance(phase, Active):
        if v <= cfg.stop_speed:
            phase = PendingStop(phase.trip_start, ts)
    elif isinstance(phase, PendingStop):
        if v > cfg.stop_speed:
            phase = Active(phase.trip_start)
        elif ts - phase.since >= cfg.stop_hold:
            boundary = TripEnded(phase.since)
            phase = Idle()
    return SegmenterState(phase, ts), boundary


@dataclass
class Trip:
    trip_id: str
    start_ts: float
    end_ts: float
    samples: list[KinematicSample]
    distance: float
    driver_id: str = "driver"

    @property
    def sample_count(self) -> int:
        return len(self.samples)

    def summary(self) -> dict:
        return {
            "trip_id": self.trip_id,
            "driver_id": self.driver_id,
            "start_ts": self.start_ts,
            "end_ts": self.end_ts,
            "distance": self.distance,
            "sample_count": self.sample_count,
        }

    def to_dict(self) -> dict:
        d = self.summary()
        d["samples"] = [
            dict(k.base.to_dict(), long_accel=k.long_accel, course_rate=k.course_rate)
            for k in self.samples
        ]
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "Trip":
        samples = [
            KinematicSample(SensorSample.from_dict(s), s["long_accel"], s["course_rate"])
            for s in d["samples"]
        ]
        return cls(
            trip_id=d["trip_id"],
            start_ts=d["start_ts"],
            end_ts=d["end_ts"],
            samples=samples,
            distance=d["distance"],
            driver_id=d.get("driver_id", "driver"),
        )


def trip_id_for(driver_id: str, start_ts: float) -> str:
    return uuid.uuid5(_TRIP_NAMESPACE, f"{driver_id}:{start_ts!r}").hex[:16]


def trip_distance_km(indexed: Sequence[tuple[int, KinematicSample]]) -> float:
    """Trapezoidal integral of speed; pairs spanning a segment gap are skipped."""
    metres = 0.0
    for (seg_a, a), (seg_b, b) in zip(indexed, indexed[1:]):
        if seg_a == seg_b:
            metres += 0.5 * (a.speed + b.speed) * (b.ts - a.ts)
    return metres / 1000.0


def _make_trip(
    indexed: list[tuple[int, KinematicSample]], start: float, end: float, driver_id: str
) -> Trip:
    inside = [(seg, k) for seg, k in indexed if start <= k.ts <= end]
    return Trip(
        trip_id=trip_id_for(driver_id, start),
        start_ts=start,
        end_ts=end,
        samples=[k for _, k in inside],
        distance=trip_distance_km(inside),
        driver_id=driver_id,
    )


def segment_trace(
    segments: Iterable[Sequence[KinematicSample]],
    cfg: SegmenterConfig = SegmenterConfig(),
    driver_id: str = "driver",
) -> list[Trip]:
    """Fold the state machine over all segments and cut trips at its boundaries.

    The machine keeps running across segment gaps. A trip still open at the
    end of the stream is closed at the last sample timestamp.
    """
    indexed = [(i, k) for i, seg in enumerate(segments) for k in seg]
    state = SegmenterState()
    spans: list[tuple[float, float]] = []
    start: float | None = None
    for _, k in indexed:
        state, boundary = step(state, k, cfg)
        if isinstance(boundary, TripStarted):
            start = boundary.ts
        elif isinstance(boundary, TripEnded):
            assert start is not None
            spans.append((start, boundary.ts))
            start = None
    if isinstance(state.phase, (Active, PendingStop)) and start is not None:
        spans.append((start, state.last_ts))
    return [_make_trip(indexed, s, e, driver_id) for s, e in spans]


@dataclass
class StreamSegmenter:
    """Incremental segmenter: feed samples one by one, collect finished trips.

    Only samples that may still belong to a trip are buffered.
    """

    cfg: SegmenterConfig = field(default_factory=SegmenterConfig)
    driver_id: str = "driver"
    state: SegmenterState = field(default_factory=SegmenterState)
    _buffer: list[tuple[int, KinematicSample]] = field(default_factory=list)
    _segment: int = 0

    def new_segment(self) -> None:
        self._segment += 1

    def feed(self, sample: KinematicSample) -> Trip | None:
        self.state, boundary = step(self.state, sample, self.cfg)
        phase = self.state.phase
        if isinstance(phase, Idle) and boundary is None:
            self._buffer.clear()
            return None
        self._buffer.append((self._segment, sample))
        if isinstance(phase, PendingStart) and boundary is None:
            # drop anything before the pending window
            self._buffer = [(s, k) for s, k in self._buffer if k.ts >= phase.since]
        if isinstance(boundary, TripEnded):
            start = self._buffer[0][1].ts
            trip = _make_trip(self._buffer, start, boundary.ts, self.driver_id)
            self._buffer.clear()
            return trip
        return None

    def close(self) -> Trip | None:
        phase = self.state.phase
        trip = None
        if isinstance(phase, (Active, PendingStop)):
            trip = _make_trip(self._buffer, phase.trip_start, self.state.last_ts, self.driver_id)
        self._buffer.clear()
        self.state = SegmenterState(Idle(), self.state.last_ts)
        return trip
