from __future__ import annotations

from dataclasses import dataclass, field
from datetime import date, datetime, timezone

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from drivefeedback.classifier import Label
from drivefeedback.errors import ValidationError
from drivefeedback.events import EventKind, Severity, UnsafeEvent
from drivefeedback.reports import (
    ATTITUDE_HEADER,
    CONTROL_HEADER,
    NORMS_HEADER,
    NumeralViolation,
    Provenance,
    ReportModels,
    ToneViolation,
    WeeklyStats,
    aggregate_week,
    check_consistency,
    extract_numerals,
    generate_report,
    generate_reports,
    mask_unsupported,
    plan_report,
    render_template_report,
    week_start_of,
)
from drivefeedback.segmenter import Trip
from drivefeedback.stubs import AdversarialStub, FailingBackend, ScriptedBackend, StubBackend

WEEK = date(2024, 4, 1)  # a Monday
MODELS = ReportModels()


def epoch(y, m, d, hh=12, mm=0, tz=0.0):
    return datetime(y, m, d, hh, mm, tzinfo=timezone.utc).timestamp() - tz * 3600


def trip(tid, start, km, driver="driver-1"):
    return Trip(tid, start, start + 600, [], km, driver)


def ev(tid, kind, t=0.0):
    return UnsafeEvent(tid, kind, t, t + 1, 5.0, 3.0, Severity.HIGH)


def stats_with(trips=3, distance=42.0, counts=None, influenced=0, deltas=None) -> WeeklyStats:
    counts = counts or {k: 0 for k in EventKind}
    return WeeklyStats(
        "driver-1", WEEK, trips, distance, counts,
        {k: c * 100 / distance for k, c in counts.items()} if distance else None,
        influenced, deltas,
    )


def test_empty_week():
    s = aggregate_week([], [], {}, "driver-1", WEEK)
    assert (s.trips, s.distance, s.total_events, s.events_per_100km) == (0, 0.0, 0, None)


def test_rate_per_100km():
    trips = [trip("a", epoch(2024, 4, 2), 20.0), trip("b", epoch(2024, 4, 3), 30.0)]
    events = [ev("a", EventKind.SPEEDING)] * 2 + [ev("b", EventKind.SPEEDING)]
    s = aggregate_week(trips, events, {"b": Label.INFLUENCED}, "driver-1", WEEK)
    assert s.events_per_100km[EventKind.SPEEDING] == pytest.approx(6.0)
    assert s.influenced_trips == 1 and s.trips == 2


def test_sunday_night_belongs_to_preceding_week():
    late = epoch(2024, 4, 7, 23, 59, tz=1.0)  # Sunday 23:59 local
    assert week_start_of(late, 1.0) == WEEK
    s = aggregate_week([trip("a", late, 5.0)], [], {}, "driver-1", WEEK, tz_offset=1.0)
    assert s.trips == 1
    s_next = aggregate_week([trip("a", late, 5.0)], [], {}, "driver-1", date(2024, 4, 8), tz_offset=1.0)
    assert s_next.trips == 0


def test_week_start_must_be_monday():
    with pytest.raises(ValidationError):
        aggregate_week([], [], {}, "d", date(2024, 4, 2))


def test_deltas_against_previous_week():
    prev = stats_with(trips=2, distance=10.0)
    trips = [trip("a", epoch(2024, 4, 2), 20.0)]
    s = aggregate_week(trips, [ev("a", EventKind.SWERVING)], {}, "driver-1", WEEK, previous=prev)
    assert s.deltas_vs_prev_week["trips"] == -1
    assert s.deltas_vs_prev_week["events_total"] == 1


def test_quiet_plan():
    plan = plan_report(stats_with())
    assert len(plan.attitude_points) == len(plan.norm_points) == len(plan.control_points) == 1


def test_top_two_control_points():
    counts = {EventKind.HARSH_ACCELERATION: 5, EventKind.SPEEDING: 3, EventKind.HARSH_BRAKING: 1, EventKind.SWERVING: 0}
    plan = plan_report(stats_with(counts=counts))
    assert len(plan.control_points) == 2
    assert "accelerator" in plan.control_points[0] and "speedometer" in plan.control_points[1]


def test_check_consistency_examples():
    s4 = stats_with(trips=4)
    assert check_consistency("You completed 4 trips", s4) == []
    s3 = stats_with(counts={EventKind.SPEEDING: 3, EventKind.HARSH_ACCELERATION: 0, EventKind.HARSH_BRAKING: 0, EventKind.SWERVING: 0})
    assert check_consistency("12 speeding events", s3) == [NumeralViolation("12")]
    assert check_consistency("a reckless week", s4) == [ToneViolation("reckless")]
    # unit phrases are not statistics; two-decimal figures never match
    assert check_consistency("1 per 100 km", stats_with(trips=1)) == []
    assert check_consistency("4.00 trips", s4) == [NumeralViolation("4.00")]


def test_template_is_deterministic_and_consistent():
    counts = {EventKind.HARSH_ACCELERATION: 2, EventKind.SPEEDING: 1, EventKind.HARSH_BRAKING: 0, EventKind.SWERVING: 4}
    s = stats_with(counts=counts, influenced=1, deltas={"events_total": -3.0, "trips": 1.0})
    text = render_template_report(plan_report(s))
    assert text == render_template_report(plan_report(s))
    assert all(h in text for h in (ATTITUDE_HEADER, NORMS_HEADER, CONTROL_HEADER))
    assert check_consistency(text, s) == []


def test_stub_two_step():
    s = stats_with(counts={EventKind.HARSH_ACCELERATION: 2, EventKind.SPEEDING: 1, EventKind.HARSH_BRAKING: 0, EventKind.SWERVING: 0})
    r = generate_report(StubBackend(), MODELS, s)
    assert r.provenance is Provenance.TWO_STEP and not r.degraded
    assert check_consistency(r.text, s) == []
    assert r.filename == "report_driver-1_2024-04-01.txt"


def test_inflated_trip_count_falls_back():
    s = stats_with(trips=2)
    bad = "You completed 5 trips this week."
    backend = ScriptedBackend([bad, bad, bad])
    r = generate_report(backend, MODELS, s)
    assert r.provenance is Provenance.FALLBACK and r.degraded
    assert check_consistency(r.text, s) == []
    # the bad numeral was masked before it went back to the model
    assert "[?]" in backend.prompts[1][1] and " 5 trips" not in backend.prompts[1][1]


def test_correction_round_can_rescue():
    s = stats_with(trips=2)
    r = generate_report(ScriptedBackend(["draft", "You completed 5 trips.", "You completed 2 trips."]), MODELS, s)
    assert r.provenance is Provenance.TWO_STEP and r.violations_fixed == 1


def test_empty_stats_and_unreachable_backend():
    s = stats_with(trips=0, distance=0.0)
    r = generate_report(FailingBackend(), MODELS, s)
    assert r.provenance is Provenance.FALLBACK and r.error == "backend unreachable"
    assert check_consistency(r.text, s) == []


def test_generate_reports_parallel_order():
    stats = [stats_with(trips=i + 1) for i in range(6)]
    out = generate_reports(StubBackend(), MODELS, stats, concurrency=3)
    assert [r.week_start for r in out] == [s.week_start for s in stats]
    assert all(check_consistency(r.text, s) == [] for r, s in zip(out, stats))


def test_mask_unsupported():
    s = stats_with(trips=2)
    assert mask_unsupported("2 trips, 7 stops, 3.25 km, 9 per 100 km", s) == "2 trips, [?] stops, [?] km, [?] per 100 km"


@dataclass
class Recorder:
    inner: object
    prompts: list[str] = field(default_factory=list)
    max_prompt_length: int = 1_000_000

    def generate(self, model_id, prompt):
        self.prompts.append(prompt)
        return self.inner.generate(model_id, prompt)


counts_st = st.fixed_dictionaries({k: st.integers(0, 40) for k in EventKind})


@settings(max_examples=120, deadline=None)
@given(st.integers(0, 30), st.floats(0.5, 900, allow_nan=False), counts_st, st.integers(0, 5),
       st.one_of(st.none(), st.fixed_dictionaries({"events_total": st.integers(-20, 20).map(float)})),
       st.integers(0, 10_000))
def test_output_safety_and_prompt_hygiene(trips, distance, counts, influenced, deltas, seed):
    s = stats_with(trips, distance, counts, min(influenced, trips), deltas)
    rec = Recorder(AdversarialStub(0.5, seed))
    r = generate_report(rec, MODELS, s)
    assert check_consistency(r.text, s) == []
    for prompt in rec.prompts:
        body = "\n".join(prompt.splitlines()[1:])  # first line carries the template version
        assert check_consistency(body, s, banned_phrases=()) == [], extract_numerals(body)
