from __future__ import annotations

from typing import Sequence

import pytest

from drivefeedback.segmenter import Trip, trip_distance_km
from drivefeedback.telemetry import KinematicSample, SensorSample, derive_kinematics


def sample(ts: float, speed: float = 0.0, course: float = 0.0, ay: float = 0.0) -> SensorSample:
    return SensorSample(ts, 6.5244, 3.3792, speed, course, 0.0, ay, 9.81)


def kinematic(speeds: Sequence[float], t0: float = 0.0, dt: float = 1.0,
              courses: Sequence[float] | None = None) -> list[KinematicSample]:
    courses = courses if courses is not None else [0.0] * len(speeds)
    return derive_kinematics([sample(t0 + i * dt, v, c) for i, (v, c) in enumerate(zip(speeds, courses))])


def trip_of(speeds: Sequence[float], t0: float = 0.0, dt: float = 1.0,
            courses: Sequence[float] | None = None, trip_id: str = "t1") -> Trip:
    ks = kinematic(speeds, t0, dt, courses)
    return Trip(trip_id, ks[0].ts, ks[-1].ts, ks, trip_distance_km([(0, k) for k in ks]))


@pytest.fixture
def tmp_store(tmp_path):
    from drivefeedback.store import Store

    st = Store(tmp_path / "store.db")
    yield st
    st.close()


# one line per acceptance criterion, printed in the terminal summary
ACCEPTANCE_RESULTS: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_RESULTS, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
