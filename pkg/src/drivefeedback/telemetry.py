"""Sensor log parsing, cleaning and kinematic derivation.

Canonical csv header is ``ts,lat,lon,speed,course,ax,ay,az``; jsonl records
carry the same field names. Axes follow the device convention
x = lateral, y = longitudinal, z = vertical.
"""

from __future__ import annotations

import csv
import io
import json
import math
from collections import Counter
from dataclasses import dataclass, field, fields, replace
from typing import Iterable, Sequence

from .errors import IngestError, SchemaError

FIELDS = ("ts", "lat", "lon", "speed", "course", "ax", "ay", "az")
CSV_HEADER = ",".join(FIELDS)

ACCEL_CLAMP = 39.24  # 4 g
DEFAULT_MAX_GAP = 5.0

OUT_OF_RANGE = "out-of-range"
NON_MONOTONIC = "non-monotonic"
NON_FINITE = "non-finite"
MALFORMED = "malformed"


@dataclass(frozen=True, slots=True)
class SensorSample:
    ts: float
    lat: float
    lon: float
    speed: float
    course: float
    ax: float
    ay: float
    az: float

    def to_dict(self) -> dict[str, float]:
        return {name: getattr(self, name) for name in FIELDS}

    @classmethod
    def from_dict(cls, d: dict) -> "SensorSample":
        return cls(*(float(d[name]) for name in FIELDS))


@dataclass(frozen=True, slots=True)
class KinematicSample:
    """A sample plus speed-differenced longitudinal acceleration and course rate."""

    base: SensorSample
    long_accel: float = 0.0
    course_rate: float = 0.0

    @property
    def ts(self) -> float:
        return self.base.ts

    @property
    def speed(self) -> float:
        return self.base.speed


@dataclass
class IngestReport:
    accepted: int = 0
    rejected: int = 0
    reasons: Counter = field(default_factory=Counter)
    gaps: list[tuple[float, float]] = field(default_factory=list)
    clamped: int = 0

    def reject(self, reason: str) -> None:
        self.rejected += 1
        self.reasons[reason] += 1

    def to_dict(self) -> dict:
        return {
            "accepted": self.accepted,
            "rejected": self.rejected,
            "reasons": dict(sorted(self.reasons.items())),
            "gaps": [list(g) for g in self.gaps],
            "clamped": self.clamped,
        }


def _range_ok(s: SensorSample) -> bool:
    return (
        -90.0 <= s.lat <= 90.0
        and -180.0 <= s.lon <= 180.0
        and s.speed >= 0.0
        and 0.0 <= s.course < 360.0
    )


def _validate(values: Sequence[float], report: IngestReport) -> SensorSample | None:
    if not all(math.isfinite(v) for v in values):
        report.reject(NON_FINITE)
        return None
    sample = SensorSample(*values)
    if not _range_ok(sample):
        report.reject(OUT_OF_RANGE)
        return None
    report.accepted += 1
    return sample


def _parse_csv(text: str, report: IngestReport) -> list[SensorSample]:
    lines = text.splitlines()
    # skip leading blank lines before the header
    while lines and not lines[0].strip():
        lines.pop(0)
    if not lines:
        return []
    header = lines[0].strip().lstrip("﻿")
    if header.replace(" ", "") != CSV_HEADER:
        raise SchemaError(f"csv header mismatch: expected {CSV_HEADER!r}, got {header[:80]!r}")
    out: list[SensorSample] = []
    for row in csv.reader(line for line in lines[1:] if line.strip()):
        if len(row) != len(FIELDS):
            report.reject(MALFORMED)
            continue
        try:
            values = [float(cell) for cell in row]
        except ValueError:
            report.reject(MALFORMED)
            continue
        sample = _validate(values, report)
        if sample is not None:
            out.append(sample)
    return out


def _parse_jsonl(text: str, report: IngestReport) -> list[SensorSample]:
    out: list[SensorSample] = []
    for line in text.splitlines():
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
        except ValueError:
            report.reject(MALFORMED)
            continue
        if not isinstance(obj, dict) or set(obj) != set(FIELDS):
            report.reject(MALFORMED)
            continue
        raw = [obj[name] for name in FIELDS]
        if not all(isinstance(v, (int, float)) and not isinstance(v, bool) for v in raw):
            report.reject(MALFORMED)
            continue
        sample = _validate([float(v) for v in raw], report)
        if sample is not None:
            out.append(sample)
    return out


def parse_log(stream: bytes, format: str) -> tuple[list[SensorSample], IngestReport]:
    """Parse a raw csv or jsonl sensor log.

    Malformed, non-finite and out-of-range records are tallied in the
    report rather than raised. Raises ``IngestError`` if the bytes are not
    UTF-8 and ``SchemaError`` on a csv header mismatch.
    """
    try:
        text = stream.decode("utf-8")
    except (UnicodeDecodeError, AttributeError) as exc:
        raise IngestError(f"unreadable sensor stream: {exc}") from exc
    report = IngestReport()
    if format == "csv":
        samples = _parse_csv(text, report)
    elif format == "jsonl":
        samples = _parse_jsonl(text, report)
    else:
        raise SchemaError(f"unknown log format {format!r}")
    return samples, report


def _clamp(v: float) -> float:
    return max(-ACCEL_CLAMP, min(ACCEL_CLAMP, v))


def clean_stream(
    samples: Iterable[SensorSample], max_gap: float = DEFAULT_MAX_GAP
) -> tuple[list[list[SensorSample]], IngestReport]:
    """Drop timestamp backsteps, clamp accelerations and split on gaps."""
    report = IngestReport()
    segments: list[list[SensorSample]] = []
    current: list[SensorSample] = []
    last_ts: float | None = None
    for s in samples:
        if last_ts is not None and s.ts <= last_ts:
            report.reject(NON_MONOTONIC)
            continue
        clamped = replace(s, ax=_clamp(s.ax), ay=_clamp(s.ay), az=_clamp(s.az))
        if clamped != s:
            report.clamped += 1
        if last_ts is not None and s.ts - last_ts > max_gap:
            report.gaps.append((last_ts, s.ts - last_ts))
            segments.append(current)
            current = []
        current.append(clamped)
        report.accepted += 1
        last_ts = s.ts
    if current:
        segments.append(current)
    return segments, report


def shortest_arc(delta: float) -> float:
    """Signed course change in degrees, wrapped into [-180, 180)."""
    return (delta + 180.0) % 360.0 - 180.0


def derive_kinematics(segment: Sequence[SensorSample]) -> list[KinematicSample]:
    out: list[KinematicSample] = []
    prev: SensorSample | None = None
    for s in segment:
        if prev is None:
            out.append(KinematicSample(s))
        else:
            dt = s.ts - prev.ts
            out.append(
                KinematicSample(
                    s,
                    long_accel=(s.speed - prev.speed) / dt,
                    course_rate=shortest_arc(s.course - prev.course) / dt,
                )
            )
        prev = s
    return out


def format_number(value: float) -> str:
    """Canonical log number: at most 6 fractional digits, no trailing zeros."""
    text = f"{value:.6f}".rstrip("0").rstrip(".")
    if text in ("-0", ""):
        return "0"
    return text


def to_csv(samples: Iterable[SensorSample]) -> bytes:
    buf = io.StringIO()
    buf.write(CSV_HEADER + "\n")
    for s in samples:
        buf.write(",".join(format_number(getattr(s, f.name)) for f in fields(s)) + "\n")
    return buf.getvalue().encode("utf-8")


def to_jsonl(samples: Iterable[SensorSample]) -> bytes:
    lines = []
    for s in samples:
        lines.append(
            "{" + ",".join(f'"{name}":{format_number(getattr(s, name))}' for name in FIELDS) + "}"
        )
    return ("\n".join(lines) + ("\n" if lines else "")).encode("utf-8")


def infer_format(path: str) -> str:
    lowered = path.lower()
    if lowered.endswith(".jsonl") or lowered.endswith(".ndjson"):
        return "jsonl"
    if lowered.endswith(".csv"):
        return "csv"
    raise SchemaError(f"cannot infer log format from {path!r}; pass --format")
