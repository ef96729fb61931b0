"""Rule-based unsafe driving event detection with speed-adaptive thresholds."""

from __future__ import annotations

from dataclasses import asdict, dataclass
from enum import Enum
from typing import Callable, Sequence

from .errors import ValidationError
from .segmenter import Trip
from .telemetry import KinematicSample


class EventKind(str, Enum):
    HARSH_ACCELERATION = "HarshAcceleration"
    HARSH_BRAKING = "HarshBraking"
    SPEEDING = "Speeding"
    SWERVING = "Swerving"


class Severity(str, Enum):
    LOW = "Low"
    MEDIUM = "Medium"
    HIGH = "High"


@dataclass(frozen=True)
class ThresholdProfile:
    brake_lo: float = 3.5
    brake_hi: float = 2.5
    v_lo: float = 11.11
    v_hi: float = 22.22
    accel_limit: float = 3.0
    speed_limit: float = 13.89
    speed_margin: float = 0.05
    speed_min_dur: float = 5.0
    swerve_limit: float = 25.0
    swerve_min_speed: float = 5.0
    merge_window: float = 2.0

    def __post_init__(self) -> None:
        if not self.brake_lo > self.brake_hi > 0:
            raise ValidationError("thresholds require brake_lo > brake_hi > 0")
        if not self.v_lo < self.v_hi:
            raise ValidationError("thresholds require v_lo < v_hi")
        limits = (self.accel_limit, self.speed_limit, self.speed_min_dur, self.swerve_limit)
        if min(limits) <= 0 or self.speed_margin < 0 or self.merge_window < 0:
            raise ValidationError("threshold limits must be positive")

    @property
    def speeding_threshold(self) -> float:
        return self.speed_limit * (1.0 + self.speed_margin)


@dataclass(frozen=True)
class UnsafeEvent:
    trip_id: str
    kind: EventKind
    start_ts: float
    end_ts: float
    peak_value: float
    threshold_at_trigger: float
    severity: Severity

    def to_dict(self) -> dict:
        d = asdict(self)
        d["kind"] = self.kind.value
        d["severity"] = self.severity.value
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "UnsafeEvent":
        return cls(
            trip_id=d["trip_id"],
            kind=EventKind(d["kind"]),
            start_ts=float(d["start_ts"]),
            end_ts=float(d["end_ts"]),
            peak_value=float(d["peak_value"]),
            threshold_at_trigger=float(d["threshold_at_trigger"]),
            severity=Severity(d["severity"]),
        )


def braking_threshold(speed: float, profile: ThresholdProfile = ThresholdProfile()) -> float:
    """Deceleration magnitude that counts as harsh; shrinks as speed grows."""
    if speed <= profile.v_lo:
        return profile.brake_lo
    if speed >= profile.v_hi:
        return profile.brake_hi
    frac = (speed - profile.v_lo) / (profile.v_hi - profile.v_lo)
    return profile.brake_lo + frac * (profile.brake_hi - profile.brake_lo)


def severity(exceedance_ratio: float) -> Severity:
    if not exceedance_ratio >= 1.0:
        raise ValidationError(f"exceedance ratio must be >= 1, got {exceedance_ratio}")
    if exceedance_ratio < 1.25:
        return Severity.LOW
    if exceedance_ratio < 1.5:
        return Severity.MEDIUM
    return Severity.HIGH


@dataclass
class _Raw:
    start: float
    end: float
    peak: float
    threshold: float


def _merge(raws: list[_Raw], window: float, more_extreme: Callable[[float, float], bool]) -> list[_Raw]:
    merged: list[_Raw] = []
    for r in raws:
        if merged and r.start - merged[-1].end <= window:
            last = merged[-1]
            last.end = max(last.end, r.end)
            if more_extreme(r.peak, last.peak):
                last.peak = r.peak
        else:
            merged.append(_Raw(r.start, r.end, r.peak, r.threshold))
    return merged


def _pointwise(samples: Sequence[KinematicSample], profile: ThresholdProfile):
    """Per-interval detections for the three single-sample rules."""
    accel: list[_Raw] = []
    brake: list[_Raw] = []
    swerve: list[_Raw] = []
    for prev, cur in zip(samples, samples[1:]):
        a = cur.long_accel
        if a > profile.accel_limit:
            accel.append(_Raw(prev.ts, cur.ts, a, profile.accel_limit))
        # braking is judged at the speed the vehicle had when braking began
        limit = braking_threshold(prev.speed, profile)
        if a < -limit:
            brake.append(_Raw(prev.ts, cur.ts, a, limit))
        if cur.speed >= profile.swerve_min_speed and abs(cur.course_rate) > profile.swerve_limit:
            swerve.append(_Raw(prev.ts, cur.ts, cur.course_rate, profile.swerve_limit))
    return accel, brake, swerve


def _speeding(samples: Sequence[KinematicSample], profile: ThresholdProfile) -> list[_Raw]:
    limit = profile.speeding_threshold
    runs: list[_Raw] = []
    run: list[KinematicSample] = []
    for k in list(samples) + [None]:
        if k is not None and k.speed > limit:
            run.append(k)
            continue
        if run and run[-1].ts - run[0].ts >= profile.speed_min_dur:
            runs.append(_Raw(run[0].ts, run[-1].ts, max(s.speed for s in run), limit))
        run = []
    return runs


def _abs_greater(a: float, b: float) -> bool:
    return abs(a) > abs(b)


def detect_events(trip: Trip, profile: ThresholdProfile = ThresholdProfile()) -> list[UnsafeEvent]:
    samples = trip.samples
    accel, brake, swerve = _pointwise(samples, profile)
    groups = [
        (EventKind.HARSH_ACCELERATION, _merge(accel, profile.merge_window, lambda a, b: a > b)),
        (EventKind.HARSH_BRAKING, _merge(brake, profile.merge_window, lambda a, b: a < b)),
        (EventKind.SPEEDING, _merge(_speeding(samples, profile), profile.merge_window, lambda a, b: a > b)),
        (EventKind.SWERVING, _merge(swerve, profile.merge_window, _abs_greater)),
    ]
    events = [
        UnsafeEvent(
            trip_id=trip.trip_id,
            kind=kind,
            start_ts=r.start,
            end_ts=r.end,
            peak_value=r.peak,
            threshold_at_trigger=r.threshold,
            severity=severity(abs(r.peak) / r.threshold),
        )
        for kind, raws in groups
        for r in raws
    ]
    order = {k: i for i, k in enumerate(EventKind)}
    events.sort(key=lambda e: (e.start_ts, order[e.kind]))
    return events


def merge_events(events: Sequence[UnsafeEvent], profile: ThresholdProfile = ThresholdProfile()) -> list[UnsafeEvent]:
    """Re-apply the same-kind merge rule to already detected events."""
    out: list[UnsafeEvent] = []
    for kind in EventKind:
        mine = sorted((e for e in events if e.kind is kind), key=lambda e: e.start_ts)
        for e in mine:
            prev = out[-1] if out and out[-1].kind is kind and out[-1].trip_id == e.trip_id else None
            if prev is not None and e.start_ts - prev.end_ts <= profile.merge_window:
                peak = e.peak_value if _abs_greater(e.peak_value, prev.peak_value) else prev.peak_value
                out[-1] = UnsafeEvent(
                    prev.trip_id, kind, prev.start_ts, max(prev.end_ts, e.end_ts), peak,
                    prev.threshold_at_trigger,
                    severity(abs(peak) / prev.threshold_at_trigger),
                )
            else:
                out.append(e)
    order = {k: i for i, k in enumerate(EventKind)}
    out.sort(key=lambda e: (e.start_ts, order[e.kind]))
    return out
