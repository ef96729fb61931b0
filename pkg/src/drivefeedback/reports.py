"""Weekly statistics and the draft/revise report pipeline.

Reports are organised around attitudes (why it matters), subjective norms
(how the driver compares with peers) and perceived control (what to do).
Whatever the backend returns, the emitted text passes ``check_consistency``:
every numeral must be traceable to the week's statistics and no blaming
phrase may appear. Otherwise the deterministic template report is used.
"""

from __future__ import annotations

import json
import re
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from datetime import date, datetime, timedelta, timezone
from enum import Enum
from typing import Iterable, Mapping, Sequence

from .backends import DEFAULT_CONCURRENCY, BackendError, BoundedBackend, GenerationBackend
from .classifier.features import Label
from .errors import ValidationError
from .events import EventKind, UnsafeEvent
from .segmenter import Trip

REPORT_PROMPT_VERSION = "report-prompt/v1"
DRAFT_HEADER = "REPORT-DRAFT"
REVISE_HEADER = "REPORT-REVISE"
CORRECT_HEADER = "REPORT-CORRECT"
STATS_BEGIN, STATS_END = "STATS-JSON-BEGIN", "STATS-JSON-END"
PLAN_BEGIN, PLAN_END = "PLAN-JSON-BEGIN", "PLAN-JSON-END"
DRAFT_BEGIN, DRAFT_END = "DRAFT-BEGIN", "DRAFT-END"

DEFAULT_BANNED_PHRASES = (
    "reckless",
    "you failed",
    "dangerous driver",
    "irresponsible",
    "careless driver",
    "shame on you",
)

# typical community rates (events per 100 km); override via config
DEFAULT_PEER_RATES = {
    EventKind.HARSH_ACCELERATION: 9.2,
    EventKind.SPEEDING: 5.9,
    EventKind.HARSH_BRAKING: 3.7,
    EventKind.SWERVING: 1.2,
}

ATTITUDE_HEADER = "Why it matters"
NORMS_HEADER = "How you compare"
CONTROL_HEADER = "What you can do"

_KIND_LABEL = {
    EventKind.HARSH_ACCELERATION: "harsh acceleration",
    EventKind.HARSH_BRAKING: "harsh braking",
    EventKind.SPEEDING: "speeding",
    EventKind.SWERVING: "swerving",
}
_CONSEQUENCE = {
    EventKind.HARSH_ACCELERATION: "Gentler starts save fuel, reduce wear on your vehicle and give pedestrians time to react.",
    EventKind.HARSH_BRAKING: "Braking early keeps your passengers comfortable and lowers the risk of being hit from behind.",
    EventKind.SPEEDING: "Staying within the limit gives you more time to react when something unexpected happens.",
    EventKind.SWERVING: "Holding a steady line makes your movements predictable for everyone sharing the road.",
}
_TECHNIQUE = {
    EventKind.HARSH_ACCELERATION: "When the light turns green or traffic clears, count slowly before pressing the accelerator and build speed gradually.",
    EventKind.HARSH_BRAKING: "Look far ahead and ease off the accelerator early so you can brake gently instead of suddenly.",
    EventKind.SPEEDING: "Check your speedometer whenever you pass a speed sign and leave a little earlier so you never feel rushed.",
    EventKind.SWERVING: "Check your mirrors and signal before changing lanes, and keep both hands on the wheel.",
}


class Provenance(str, Enum):
    TWO_STEP = "TwoStep"
    FALLBACK = "Fallback"


def week_start_of(ts: float, tz_offset: float = 0.0) -> date:
    local = datetime.fromtimestamp(ts + tz_offset * 3600.0, tz=timezone.utc).date()
    return local - timedelta(days=local.weekday())


def _local_epoch(day: date, tz_offset: float) -> float:
    return datetime(day.year, day.month, day.day, tzinfo=timezone.utc).timestamp() - tz_offset * 3600.0


@dataclass
class WeeklyStats:
    driver_id: str
    week_start: date
    trips: int = 0
    distance: float = 0.0
    events_by_kind: dict[EventKind, int] = field(default_factory=lambda: {k: 0 for k in EventKind})
    events_per_100km: dict[EventKind, float] | None = None
    influenced_trips: int = 0
    deltas_vs_prev_week: dict[str, float] | None = None
    peer_rates: dict[EventKind, float] = field(default_factory=lambda: dict(DEFAULT_PEER_RATES))

    @property
    def total_events(self) -> int:
        return sum(self.events_by_kind.values())

    def is_quiet(self) -> bool:
        return self.total_events == 0 and self.influenced_trips == 0

    def to_dict(self) -> dict:
        """Canonical presentation: floats at one decimal, as reports state them."""
        return {
            "driver_id": self.driver_id,
            "week_start": self.week_start.isoformat(),
            "trips": self.trips,
            "distance_km": round(self.distance, 1),
            "events_by_kind": {k.value: v for k, v in self.events_by_kind.items()},
            "events_total": self.total_events,
            "events_per_hundred_km": (
                None
                if self.events_per_100km is None
                else {k.value: round(v, 1) for k, v in self.events_per_100km.items()}
            ),
            "influenced_trips": self.influenced_trips,
            "deltas_vs_prev_week": (
                None
                if self.deltas_vs_prev_week is None
                else {k: round(v, 1) for k, v in sorted(self.deltas_vs_prev_week.items())}
            ),
            "peer_rates_per_hundred_km": {k.value: round(v, 1) for k, v in self.peer_rates.items()},
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "WeeklyStats":
        rates = d.get("events_per_hundred_km")
        return cls(
            driver_id=d["driver_id"],
            week_start=date.fromisoformat(d["week_start"]),
            trips=int(d["trips"]),
            distance=float(d["distance_km"]),
            events_by_kind={EventKind(k): int(v) for k, v in d["events_by_kind"].items()},
            events_per_100km=None if rates is None else {EventKind(k): float(v) for k, v in rates.items()},
            influenced_trips=int(d["influenced_trips"]),
            deltas_vs_prev_week=d.get("deltas_vs_prev_week"),
            peer_rates={EventKind(k): float(v) for k, v in d["peer_rates_per_hundred_km"].items()},
        )


def _deltas(cur: WeeklyStats, prev: WeeklyStats) -> dict[str, float]:
    d: dict[str, float] = {
        "trips": cur.trips - prev.trips,
        "distance": cur.distance - prev.distance,
        "influenced_trips": cur.influenced_trips - prev.influenced_trips,
        "events_total": cur.total_events - prev.total_events,
    }
    for k in EventKind:
        d[f"events.{k.value}"] = cur.events_by_kind[k] - prev.events_by_kind[k]
        if cur.events_per_100km is not None and prev.events_per_100km is not None:
            d[f"rate.{k.value}"] = cur.events_per_100km[k] - prev.events_per_100km[k]
    return d


def aggregate_week(
    trips: Iterable[Trip],
    events: Iterable[UnsafeEvent],
    classifications: Mapping[str, Label],
    driver_id: str,
    week_start: date,
    tz_offset: float = 0.0,
    previous: WeeklyStats | None = None,
    peer_rates: Mapping[EventKind, float] | None = None,
) -> WeeklyStats:
    """Aggregate one driver's trips whose local start falls in the week."""
    if week_start.weekday() != 0:
        raise ValidationError(f"week_start {week_start} is not a Monday")
    lo = _local_epoch(week_start, tz_offset)
    hi = lo + 7 * 86400.0
    mine = [t for t in trips if t.driver_id == driver_id and lo <= t.start_ts < hi]
    ids = {t.trip_id for t in mine}
    counts = {k: 0 for k in EventKind}
    for e in events:
        if e.trip_id in ids:
            counts[e.kind] += 1
    distance = sum(t.distance for t in mine)
    stats = WeeklyStats(
        driver_id=driver_id,
        week_start=week_start,
        trips=len(mine),
        distance=distance,
        events_by_kind=counts,
        events_per_100km={k: c * 100.0 / distance for k, c in counts.items()} if distance > 0 else None,
        influenced_trips=sum(1 for t in mine if classifications.get(t.trip_id) is Label.INFLUENCED),
        peer_rates=dict(peer_rates) if peer_rates is not None else dict(DEFAULT_PEER_RATES),
    )
    if previous is not None:
        stats.deltas_vs_prev_week = _deltas(stats, previous)
    return stats


@dataclass(frozen=True)
class ReportPlan:
    attitude_points: tuple[str, ...]
    norm_points: tuple[str, ...]
    control_points: tuple[str, ...]

    def to_dict(self) -> dict:
        return {
            "attitude_points": list(self.attitude_points),
            "norm_points": list(self.norm_points),
            "control_points": list(self.control_points),
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "ReportPlan":
        return cls(tuple(d["attitude_points"]), tuple(d["norm_points"]), tuple(d["control_points"]))


def _f1(x: float) -> str:
    return f"{x:.1f}"


def _plural(n: int, word: str) -> str:
    return f"{n} {word}" if n == 1 else f"{n} {word}s"


def _delta_phrase(delta: float, noun: str) -> str | None:
    n = int(abs(delta))
    if n == 0:
        return f"That is the same number of {noun}s as last week."
    direction = "fewer" if delta < 0 else "more"
    return f"That is {n} {direction} {noun}{'' if n == 1 else 's'} than last week."


def top_kinds(stats: WeeklyStats, n: int = 2) -> list[EventKind]:
    ranked = sorted(
        (k for k in EventKind if stats.events_by_kind[k] > 0),
        key=lambda k: (-stats.events_by_kind[k], list(EventKind).index(k)),
    )
    return ranked[:n]


def plan_report(stats: WeeklyStats) -> ReportPlan:
    if stats.is_quiet():
        if stats.trips:
            trip_text = f"You completed {_plural(stats.trips, 'trip')} covering {_f1(stats.distance)} km with no unsafe events recorded."
        else:
            trip_text = "No trips were recorded this week."
        return ReportPlan(
            (f"{trip_text} Calm, careful driving protects you, your passengers and everyone around you.",),
            ("Careful drivers like you set the example that others on the road follow.",),
            ("Keep planning your journeys and leaving extra space so that calm driving stays easy.",),
        )

    attitude: list[str] = []
    for k in EventKind:
        n = stats.events_by_kind[k]
        if n:
            attitude.append(f"You had {_plural(n, _KIND_LABEL[k] + ' event')} this week. {_CONSEQUENCE[k]}")
    if stats.influenced_trips:
        attitude.append(
            f"{_plural(stats.influenced_trips, 'trip')} showed a driving pattern similar to driving after drinking. "
            "Choosing not to drive after alcohol protects your life, your family and your livelihood."
        )
    deltas = stats.deltas_vs_prev_week
    if deltas is not None and "events_total" in deltas:
        attitude.append(_delta_phrase(deltas["events_total"], "unsafe event"))

    norms: list[str] = []
    for k in EventKind:
        if not stats.events_by_kind[k]:
            continue
        peer = stats.peer_rates.get(k)
        if stats.events_per_100km is not None and peer is not None:
            rate = stats.events_per_100km[k]
            comparison = "which is lower than" if round(rate, 1) < round(peer, 1) else "compared with"
            norms.append(
                f"Your {_KIND_LABEL[k]} rate was {_f1(rate)} per 100 km, {comparison} a typical "
                f"{_f1(peer)} per 100 km among drivers in your community."
            )
        else:
            norms.append(f"Most drivers in your community keep {_KIND_LABEL[k]} rare on their daily trips.")
    if stats.influenced_trips:
        norms.append("Most drivers in your community arrange a safe ride home when they have been drinking.")

    control = [_TECHNIQUE[k] for k in top_kinds(stats)]
    if not control:
        control.append("If you plan to drink, arrange a driver or a taxi before you go out.")
    return ReportPlan(tuple(attitude), tuple(norms), tuple(control))


def render_template_report(plan: ReportPlan) -> str:
    lines = ["Weekly driving report", ""]
    for header, points in (
        (ATTITUDE_HEADER, plan.attitude_points),
        (NORMS_HEADER, plan.norm_points),
        (CONTROL_HEADER, plan.control_points),
    ):
        lines.append(header)
        lines.extend(f"- {p}" for p in points)
        lines.append("")
    return "\n".join(lines).rstrip() + "\n"


# --- consistency checking -------------------------------------------------

_UNIT_PHRASES = re.compile(r"(?:per|/)\s*100\s*(?:km|kilomet(?:er|re)s?)\b", re.IGNORECASE)
_NUMERAL = re.compile(r"\d+(?:\.\d+)?")


@dataclass(frozen=True)
class NumeralViolation:
    value: str


@dataclass(frozen=True)
class ToneViolation:
    phrase: str


Violation = NumeralViolation | ToneViolation


def _tenths(x: float) -> int:
    return int(round(abs(x) * 10))


def allowed_numerals(stats: WeeklyStats) -> set[int]:
    """Values a report may state, in tenths (floats are presented at one decimal)."""
    values: list[float] = [stats.trips, stats.influenced_trips, stats.total_events, round(stats.distance, 1)]
    values += stats.events_by_kind.values()
    values += [round(v, 1) for v in stats.peer_rates.values()]
    if stats.events_per_100km is not None:
        values += [round(v, 1) for v in stats.events_per_100km.values()]
    if stats.deltas_vs_prev_week is not None:
        values += [round(v, 1) for v in stats.deltas_vs_prev_week.values()]
    ws = stats.week_start
    values += [ws.year, ws.month, ws.day]
    values += [int(tok) for tok in re.findall(r"\d+", stats.driver_id)]
    return {_tenths(v) for v in values}


def extract_numerals(text: str) -> list[str]:
    return _NUMERAL.findall(_UNIT_PHRASES.sub(" ", text))


def check_consistency(
    text: str, stats: WeeklyStats, banned_phrases: Sequence[str] = DEFAULT_BANNED_PHRASES
) -> list[Violation]:
    allowed = allowed_numerals(stats)
    violations: list[Violation] = []
    for token in extract_numerals(text):
        if "." in token and len(token.split(".")[1]) > 1:
            violations.append(NumeralViolation(token))
        elif _tenths(float(token)) not in allowed:
            violations.append(NumeralViolation(token))
    lowered = text.lower()
    for phrase in banned_phrases:
        if phrase.lower() in lowered:
            violations.append(ToneViolation(phrase))
    return violations


def mask_unsupported(text: str, stats: WeeklyStats) -> str:
    """Replace numerals that fail the audit so they never reach a prompt."""
    allowed = allowed_numerals(stats)
    protected = _UNIT_PHRASES.sub(lambda m: m.group(0).replace("100", "\x00"), text)

    def repl(m: re.Match) -> str:
        tok = m.group(0)
        ok = not ("." in tok and len(tok.split(".")[1]) > 1) and _tenths(float(tok)) in allowed
        return tok if ok else "[?]"

    return _NUMERAL.sub(repl, protected).replace("\x00", "100")


# --- prompts --------------------------------------------------------------

_TPB_INSTRUCTIONS = (
    "Structure the report around three ideas from the Theory of Planned Behaviour: "
    "attitudes (the personal benefits of safer driving and the consequences of the recorded events), "
    "subjective norms (how the driver compares with other drivers in the community), and "
    "perceived behavioural control (simple, concrete techniques the driver can use). "
    "Be warm, respectful and encouraging; never blame or shame the driver. "
    "Use only the numbers that appear in the statistics, written exactly as given, "
    "and express rates per hundred kilometres as \"per 100 km\"."
)


def _block(begin: str, body: str, end: str) -> list[str]:
    return [begin, body, end]


def _stats_json(stats: WeeklyStats) -> str:
    return json.dumps(stats.to_dict(), sort_keys=True, indent=1)


def build_draft_prompt(stats: WeeklyStats, plan: ReportPlan) -> str:
    return "\n".join(
        [
            f"{DRAFT_HEADER} {REPORT_PROMPT_VERSION}",
            "You are a supportive driving coach writing a weekly feedback report for a driver in Nigeria.",
            _TPB_INSTRUCTIONS,
            "Driver statistics for the week:",
            *_block(STATS_BEGIN, _stats_json(stats), STATS_END),
            "Content plan to cover, section by section:",
            *_block(PLAN_BEGIN, json.dumps(plan.to_dict(), indent=1, ensure_ascii=False), PLAN_END),
            "Write a comprehensive first draft of the report.",
        ]
    )


def build_revise_prompt(stats: WeeklyStats, draft: str) -> str:
    return "\n".join(
        [
            f"{REVISE_HEADER} {REPORT_PROMPT_VERSION}",
            "Revise the draft weekly driving report below.",
            "Check every number against the statistics and correct any that do not match exactly; "
            "remove any sentence you cannot support. Keep the three sections (attitudes, norms, control) "
            "and a supportive, non-judgemental tone. Return only the final report text.",
            _TPB_INSTRUCTIONS,
            *_block(STATS_BEGIN, _stats_json(stats), STATS_END),
            *_block(DRAFT_BEGIN, mask_unsupported(draft, stats), DRAFT_END),
        ]
    )


def build_correction_prompt(stats: WeeklyStats, text: str, violations: Sequence[Violation]) -> str:
    problems = []
    if any(isinstance(v, NumeralViolation) for v in violations):
        problems.append("some numbers did not match the statistics; they are marked [?] in the text")
    tones = sorted({v.phrase for v in violations if isinstance(v, ToneViolation)})
    if tones:
        problems.append("remove blaming language such as " + ", ".join(f'"{t}"' for t in tones))
    return "\n".join(
        [
            f"{CORRECT_HEADER} {REPORT_PROMPT_VERSION}",
            "The revised report failed an automatic fact and tone check: " + "; ".join(problems) + ".",
            "Rewrite it so that every number matches the statistics exactly and the tone stays supportive.",
            *_block(STATS_BEGIN, _stats_json(stats), STATS_END),
            *_block(DRAFT_BEGIN, mask_unsupported(text, stats), DRAFT_END),
        ]
    )


def extract_block(prompt: str, begin: str, end: str) -> str:
    start = prompt.index(begin) + len(begin)
    return prompt[start : prompt.index(end, start)].strip("\n")


# --- generation -----------------------------------------------------------


@dataclass(frozen=True)
class ReportModels:
    draft_model_id: str = "draft-model"
    refine_model_id: str = "refine-model"


@dataclass(frozen=True)
class FinalReport:
    text: str
    week_start: date
    driver_id: str
    provenance: Provenance
    violations_fixed: int = 0
    degraded: bool = False
    error: str | None = None

    @property
    def filename(self) -> str:
        return f"report_{self.driver_id}_{self.week_start.isoformat()}.txt"

    def to_dict(self) -> dict:
        return {
            "text": self.text,
            "week_start": self.week_start.isoformat(),
            "driver_id": self.driver_id,
            "provenance": self.provenance.value,
            "violations_fixed": self.violations_fixed,
            "degraded": self.degraded,
            "error": self.error,
        }


def generate_report(
    backend: GenerationBackend,
    models: ReportModels,
    stats: WeeklyStats,
    banned_phrases: Sequence[str] = DEFAULT_BANNED_PHRASES,
) -> FinalReport:
    """Draft, revise, audit, optionally correct once, else fall back to the template."""
    plan = plan_report(stats)

    def fallback(seen: int, error: str | None) -> FinalReport:
        return FinalReport(
            render_template_report(plan), stats.week_start, stats.driver_id,
            Provenance.FALLBACK, seen, degraded=True, error=error,
        )

    seen = 0
    try:
        draft = backend.generate(models.draft_model_id, build_draft_prompt(stats, plan))
        seen += len(check_consistency(draft, stats, banned_phrases))
        text = backend.generate(models.refine_model_id, build_revise_prompt(stats, draft)).strip()
        violations = check_consistency(text, stats, banned_phrases)
        if violations:
            seen += len(violations)
            prompt = build_correction_prompt(stats, text, violations)
            text = backend.generate(models.refine_model_id, prompt).strip()
            violations = check_consistency(text, stats, banned_phrases)
        if violations:
            return fallback(seen + len(violations), None)
    except BackendError as exc:
        return fallback(seen, str(exc))
    return FinalReport(text + "\n", stats.week_start, stats.driver_id, Provenance.TWO_STEP, seen)


def generate_reports(
    backend: GenerationBackend,
    models: ReportModels,
    stats_list: Sequence[WeeklyStats],
    concurrency: int = DEFAULT_CONCURRENCY,
    banned_phrases: Sequence[str] = DEFAULT_BANNED_PHRASES,
) -> list[FinalReport]:
    bounded = backend if isinstance(backend, BoundedBackend) else BoundedBackend(backend, concurrency)
    with ThreadPoolExecutor(max_workers=concurrency) as pool:
        return list(pool.map(lambda s: generate_report(bounded, models, s, banned_phrases), stats_list))
