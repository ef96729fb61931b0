"""Seeded synthetic telemetry with a ground-truth manifest.

Each trip is built from gentle cruise stretches (speed and course changes kept
well inside every detector threshold) separated by injection slots that push
exactly one quantity past its threshold by a configured margin. Kind counts
are apportioned from the configured weights rather than sampled, so the
injected mix matches the weights to within one event per kind.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from datetime import date, datetime, timezone
from pathlib import Path

import numpy as np

from .errors import ValidationError
from .events import EventKind, ThresholdProfile, braking_threshold
from .telemetry import SensorSample, to_csv

TABLE1_WEIGHTS = {
    EventKind.HARSH_ACCELERATION: 46.1,
    EventKind.SPEEDING: 29.5,
    EventKind.HARSH_BRAKING: 18.3,
    EventKind.SWERVING: 6.1,
}

GRAVITY = 9.81
METRES_PER_DEG = 111_320.0


@dataclass
class ScenarioConfig:
    seed: int = 0
    trips: int = 40
    drivers: int = 3
    event_weights: dict[EventKind, float] = field(default_factory=lambda: dict(TABLE1_WEIGHTS))
    events_per_trip: tuple[int, int] = (8, 14)
    cruise_seconds: tuple[float, float] = (16.0, 40.0)
    cruise_speed: tuple[float, float] = (7.0, 10.0)
    dt: float = 1.0
    noise_speed: float = 0.05
    noise_course: float = 0.5
    noise_accel: float = 0.05
    influenced_fraction: float = 0.3
    sober_start_hours: tuple[float, float] = (7.0, 19.0)
    influenced_start_hours: tuple[float, float] = (22.0, 2.0)
    sober_weave: tuple[float, float] = (0.5, 3.0)  # speed m/s, course degrees
    influenced_weave: tuple[float, float] = (2.5, 15.0)
    start_date: str = "2024-04-01"
    tz_offset: float = 1.0
    min_moving_seconds: float = 90.0
    origin: tuple[float, float] = (6.5244, 3.3792)
    profile: ThresholdProfile = field(default_factory=ThresholdProfile)

    def __post_init__(self) -> None:
        if any(w < 0 for w in self.event_weights.values()):
            raise ValidationError("event weights must be >= 0")
        if not 0.0 <= self.influenced_fraction <= 1.0:
            raise ValidationError("influenced_fraction must be in [0, 1]")
        lo, hi = self.events_per_trip
        if lo < 0 or hi < lo:
            raise ValidationError("events_per_trip must be a non-negative range")

    @property
    def clean(self) -> bool:
        return self.events_per_trip[1] == 0 or sum(self.event_weights.values()) == 0

    def to_dict(self) -> dict:
        d = asdict(self)
        d["event_weights"] = {k.value: v for k, v in self.event_weights.items()}
        return d


@dataclass(frozen=True)
class InjectedEvent:
    kind: EventKind
    start_ts: float
    end_ts: float
    magnitude: float

    def to_dict(self) -> dict:
        return {"kind": self.kind.value, "start_ts": self.start_ts, "end_ts": self.end_ts, "magnitude": self.magnitude}


@dataclass
class TripTruth:
    driver_id: str
    trip_index: int
    window_start: float
    window_end: float
    influenced: bool
    events: list[InjectedEvent] = field(default_factory=list)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["events"] = [e.to_dict() for e in self.events]
        return d


@dataclass
class GroundTruthManifest:
    seed: int
    trips: list[TripTruth]

    def events(self) -> list[InjectedEvent]:
        return [e for t in self.trips for e in t.events]

    def to_json(self) -> str:
        return json.dumps({"seed": self.seed, "trips": [t.to_dict() for t in self.trips]}, indent=1, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "GroundTruthManifest":
        doc = json.loads(text)
        trips = [
            TripTruth(
                t["driver_id"], t["trip_index"], t["window_start"], t["window_end"], t["influenced"],
                [InjectedEvent(EventKind(e["kind"]), e["start_ts"], e["end_ts"], e["magnitude"]) for e in t["events"]],
            )
            for t in doc["trips"]
        ]
        return cls(doc["seed"], trips)

    def truth_for(self, driver_id: str, start_ts: float, end_ts: float) -> TripTruth | None:
        for t in self.trips:
            if t.driver_id == driver_id and t.window_start <= end_ts and start_ts <= t.window_end:
                return t
        return None


def apportion(weights: dict[EventKind, float], total: int) -> dict[EventKind, int]:
    """Largest-remainder split of ``total`` events across kinds."""
    wsum = sum(weights.values())
    if total == 0 or wsum == 0:
        return {k: 0 for k in weights}
    quotas = {k: total * w / wsum for k, w in weights.items()}
    counts = {k: int(math.floor(q)) for k, q in quotas.items()}
    order = sorted(weights, key=lambda k: (-(quotas[k] - counts[k]), list(EventKind).index(k)))
    for k in order[: total - sum(counts.values())]:
        counts[k] += 1
    return counts


class _TraceBuilder:
    """Accumulates true speed/course per sample and the injected spans."""

    def __init__(self, cfg: ScenarioConfig, rng: np.random.Generator, weave: tuple[float, float]):
        self.cfg = cfg
        self.rng = rng
        self.weave = weave
        self.speed: list[float] = []
        self.course: list[float] = []
        self.events: list[tuple[EventKind, int, int, float]] = []  # kind, first idx, last idx, magnitude

    @property
    def v(self) -> float:
        return self.speed[-1]

    @property
    def c(self) -> float:
        return self.course[-1]

    def push(self, v: float, c: float | None = None) -> None:
        self.speed.append(max(v, 0.0))
        self.course.append((self.c if c is None else c) % 360.0)

    def hold(self, n: int) -> None:
        for _ in range(n):
            self.push(self.v)

    def ramp(self, target: float, rate: float = 1.0) -> None:
        dv = rate * self.cfg.dt
        steps = int(math.ceil(abs(target - self.v) / dv - 1e-9))
        start = self.v
        for i in range(1, steps + 1):
            self.push(start + (target - start) * i / steps)

    def cruise(self, vc: float) -> None:
        lo, hi = self.cfg.cruise_seconds
        n = max(2, int(round(self.rng.uniform(lo, hi) / self.cfg.dt)))
        amp_v, amp_c = self.weave
        drift = self.rng.uniform(-1.0, 1.0) * self.cfg.dt
        base_c = self.c
        for i in range(1, n + 1):
            phase = 2 * math.pi * i / n
            self.push(vc + amp_v * math.sin(phase), base_c + drift * i + amp_c * math.sin(phase))

    def inject(self, kind: EventKind, vc: float) -> None:
        p, rng, dt = self.cfg.profile, self.rng, self.cfg.dt
        if kind is EventKind.HARSH_ACCELERATION:
            self.ramp(rng.uniform(3.5, 4.5))
            first = len(self.speed) - 1
            steps = int(rng.integers(1, 3))
            a = rng.uniform(1.2, 1.5) * p.accel_limit
            for _ in range(steps):
                self.push(self.v + a * dt)
            self.events.append((kind, first, len(self.speed) - 1, a))
            self.hold(2)
        elif kind is EventKind.HARSH_BRAKING:
            self.ramp(rng.uniform(10.0, 13.0))
            first = len(self.speed) - 1
            a = rng.uniform(1.2, 1.5) * braking_threshold(self.v, p)
            self.push(self.v - a * dt)
            self.events.append((kind, first, len(self.speed) - 1, -a))
            self.hold(2)
        elif kind is EventKind.SPEEDING:
            top = rng.uniform(1.15, 1.4) * p.speeding_threshold
            self.ramp(top)
            self.hold(int(rng.integers(int(p.speed_min_dur / dt) + 1, int(p.speed_min_dur / dt) + 8)))
            above = {i for i, v in enumerate(self.speed) if v > p.speeding_threshold}
            run_end = max(above)
            run_start = run_end
            while run_start - 1 in above:
                run_start -= 1
            self.events.append((kind, run_start, run_end, top))
        elif kind is EventKind.SWERVING:
            first = len(self.speed) - 1
            rate = rng.uniform(1.4, 2.4) * p.swerve_limit * rng.choice((-1.0, 1.0))
            self.push(self.v, self.c + rate * dt)
            self.push(self.v, self.c - rate * dt)
            self.events.append((kind, first, len(self.speed) - 1, rate))
        self.ramp(vc)


def _trip_trace(
    cfg: ScenarioConfig, rng: np.random.Generator, kinds: list[EventKind], influenced: bool
) -> _TraceBuilder:
    b = _TraceBuilder(cfg, rng, cfg.influenced_weave if influenced else cfg.sober_weave)
    b.speed.append(0.0)
    b.course.append(rng.uniform(0.0, 360.0))
    b.hold(int(10 / cfg.dt))
    vc = rng.uniform(*cfg.cruise_speed)
    b.ramp(vc)
    for kind in kinds:
        b.cruise(vc)
        b.inject(kind, vc)
    b.cruise(vc)
    # a trip must move long enough for the segmenter's start hold to confirm it
    while sum(1 for v in b.speed if v >= 3.0) * cfg.dt < cfg.min_moving_seconds:
        b.cruise(vc)
    b.ramp(0.0)
    b.hold(int(math.ceil(1.1 * 180 / cfg.dt)) + 20)
    return b


def _render(
    cfg: ScenarioConfig, rng: np.random.Generator, b: _TraceBuilder, t0: float, lat: float, lon: float
) -> list[SensorSample]:
    dt = cfg.dt
    n = len(b.speed)
    out: list[SensorSample] = []
    prev_v, prev_c = b.speed[0], b.course[0]
    for i in range(n):
        v_true, c_true = b.speed[i], b.course[i]
        moving = v_true > 0.0
        v = max(0.0, v_true + (rng.uniform(-cfg.noise_speed, cfg.noise_speed) if moving else 0.0))
        c = (c_true + (rng.uniform(-cfg.noise_course, cfg.noise_course) if moving else 0.0)) % 360.0
        long_a = (v_true - prev_v) / dt if i else 0.0
        turn = (((c_true - prev_c + 180.0) % 360.0) - 180.0) / dt if i else 0.0
        lat += v_true * math.cos(math.radians(c_true)) * dt / METRES_PER_DEG
        lon += v_true * math.sin(math.radians(c_true)) * dt / (METRES_PER_DEG * math.cos(math.radians(lat)))
        noise = lambda: rng.uniform(-cfg.noise_accel, cfg.noise_accel)  # noqa: E731
        out.append(
            SensorSample(
                ts=round(t0 + i * dt, 6),
                lat=round(lat, 6),
                lon=round(lon, 6),
                speed=round(v, 6),
                course=round(c, 6) % 360.0,
                ax=round(v_true * math.radians(turn) + noise(), 6),
                ay=round(long_a + noise(), 6),
                az=round(GRAVITY + noise(), 6),
            )
        )
        prev_v, prev_c = v_true, c_true
    return out


def _start_hour(cfg: ScenarioConfig, rng: np.random.Generator, influenced: bool) -> float:
    lo, hi = cfg.influenced_start_hours if influenced else cfg.sober_start_hours
    span = (hi - lo) % 24.0 or 24.0
    # may exceed 24: a late start rolls into the next calendar day
    return lo + rng.uniform(0.0, span)


def generate_corpus(cfg: ScenarioConfig) -> tuple[dict[str, list[SensorSample]], GroundTruthManifest]:
    """Build per-driver sensor logs and the manifest of what was injected."""
    master = np.random.default_rng(cfg.seed)
    lo, hi = cfg.events_per_trip
    per_trip = [0 if cfg.clean else int(master.integers(lo, hi + 1)) for _ in range(cfg.trips)]
    counts = apportion(cfg.event_weights, sum(per_trip))
    pool = [k for k in EventKind for _ in range(counts.get(k, 0))]
    pool = [pool[i] for i in master.permutation(len(pool))]
    n_influenced = int(round(cfg.influenced_fraction * cfg.trips))
    influenced = set(master.permutation(cfg.trips)[:n_influenced].tolist())

    day0 = date.fromisoformat(cfg.start_date)
    epoch0 = datetime(day0.year, day0.month, day0.day, tzinfo=timezone.utc).timestamp() - cfg.tz_offset * 3600.0
    logs: dict[str, list[SensorSample]] = {}
    truths: list[TripTruth] = []
    cursor = 0
    for i in range(cfg.trips):
        rng = np.random.default_rng([cfg.seed, i])
        driver = f"driver-{i % cfg.drivers + 1}"
        day_index = i // cfg.drivers
        is_inf = i in influenced
        kinds = pool[cursor : cursor + per_trip[i]]
        cursor += per_trip[i]
        t0 = round(epoch0 + day_index * 86400.0 + _start_hour(cfg, rng, is_inf) * 3600.0, 3)
        builder = _trip_trace(cfg, rng, kinds, is_inf)
        jitter = rng.uniform(-0.05, 0.05, size=2)
        samples = _render(cfg, rng, builder, t0, cfg.origin[0] + jitter[0], cfg.origin[1] + jitter[1])
        events = [
            InjectedEvent(kind, samples[a].ts, samples[z].ts, float(mag))
            for kind, a, z, mag in builder.events
        ]
        logs.setdefault(driver, []).extend(samples)
        truths.append(TripTruth(driver, i, samples[0].ts, samples[-1].ts, is_inf, events))
    for driver in logs:
        logs[driver].sort(key=lambda s: s.ts)
    return logs, GroundTruthManifest(cfg.seed, truths)


def write_corpus(
    logs: dict[str, list[SensorSample]], manifest: GroundTruthManifest, out_dir: str | Path
) -> list[Path]:
    out = Path(out_dir)
    (out / "logs").mkdir(parents=True, exist_ok=True)
    paths = []
    for driver, samples in sorted(logs.items()):
        path = out / "logs" / f"{driver}.csv"
        path.write_bytes(to_csv(samples))
        paths.append(path)
    (out / "manifest.json").write_text(manifest.to_json() + "\n", encoding="utf-8")
    return paths
