"""Per-trip feature extraction for the alcohol-influence classifier."""

from __future__ import annotations

import math
from dataclasses import astuple, dataclass
from datetime import datetime, timezone
from enum import Enum
from typing import Sequence

from ..errors import DriveFeedbackError
from ..segmenter import Trip

FEATURE_NAMES = ("mean_hour", "day_of_week", "speed_std", "course_std", "mean_accel_y")
HOUR_INDEX = 0


class InsufficientDataError(DriveFeedbackError):
    pass


class Label(str, Enum):
    INFLUENCED = "Influenced"
    SOBER = "Sober"


@dataclass(frozen=True)
class TripFeatures:
    mean_hour: float
    day_of_week: int
    speed_std: float
    course_std: float
    mean_accel_y: float

    def as_tuple(self) -> tuple[float, ...]:
        return tuple(float(v) for v in astuple(self))

    @classmethod
    def from_sequence(cls, values: Sequence[float]) -> "TripFeatures":
        h, d, s, c, a = values
        return cls(float(h), int(round(d)), float(s), float(c), float(a))


def circular_mean(angles_rad: Sequence[float]) -> tuple[float, float]:
    """Return (mean angle in [0, 2pi), mean resultant length R)."""
    n = len(angles_rad)
    s = sum(math.sin(a) for a in angles_rad) / n
    c = sum(math.cos(a) for a in angles_rad) / n
    r = math.hypot(s, c)
    return math.atan2(s, c) % (2 * math.pi), r


def circular_mean_hour(hours: Sequence[float]) -> float:
    mean, _ = circular_mean([h * math.pi / 12.0 for h in hours])
    hour = mean * 12.0 / math.pi
    # atan2 noise around midnight can land a hair below 24
    if hour >= 24.0 - 1e-9 or hour < 1e-9:
        hour = 0.0
    return hour


def circular_std_deg(degrees: Sequence[float]) -> float:
    _, r = circular_mean([math.radians(d) for d in degrees])
    r = min(r, 1.0)
    if r >= 1.0 - 1e-15:
        return 0.0
    r = max(r, 1e-300)  # keeps a fully dispersed set finite
    return math.sqrt(-2.0 * math.log(r)) * 180.0 / math.pi


def population_std(values: Sequence[float]) -> float:
    n = len(values)
    mean = math.fsum(values) / n
    return math.sqrt(math.fsum((v - mean) ** 2 for v in values) / n)


def local_hour(ts: float, tz_offset: float) -> float:
    return ((ts + tz_offset * 3600.0) % 86400.0) / 3600.0


def extract_features(trip: Trip, tz_offset: float = 0.0) -> TripFeatures:
    samples = [k.base for k in trip.samples]
    if len(samples) < 2:
        raise InsufficientDataError(f"trip {trip.trip_id} has fewer than 2 samples")
    start_local = datetime.fromtimestamp(trip.start_ts + tz_offset * 3600.0, tz=timezone.utc)
    return TripFeatures(
        mean_hour=circular_mean_hour([local_hour(s.ts, tz_offset) for s in samples]),
        day_of_week=start_local.weekday(),
        speed_std=population_std([s.speed for s in samples]),
        course_std=circular_std_deg([s.course for s in samples]),
        mean_accel_y=math.fsum(s.ay for s in samples) / len(samples),
    )
