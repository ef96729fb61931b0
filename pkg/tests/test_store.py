from __future__ import annotations

import random
import subprocess
import sys
import textwrap
import threading
from pathlib import Path

import pytest

from drivefeedback.errors import ValidationError
from drivefeedback.store import (
    Connectivity,
    FakeUplink,
    NotFoundError,
    QueueEntry,
    RecordKind,
    Store,
    StoreRecord,
    SyncState,
)

ONLINE, OFFLINE = Connectivity.ONLINE, Connectivity.OFFLINE


def event_record(i: int, driver: str = "d1", ts: float | None = None) -> StoreRecord:
    payload = {
        "trip_id": f"t{i}", "kind": "Speeding", "start_ts": float(i), "end_ts": i + 6.0,
        "peak_value": 16.0, "threshold_at_trigger": 14.58, "severity": "Low",
    }
    return StoreRecord.of(RecordKind.EVENT, payload, driver, record_id=f"{driver}-{i}", created_ts=float(i) if ts is None else ts)


def test_put_get_round_trip(tmp_store):
    rec = event_record(1)
    assert tmp_store.put(rec) == rec.record_id
    assert tmp_store.get(rec.record_id) == rec
    with pytest.raises(NotFoundError):
        tmp_store.get("nope")


def test_reopen_keeps_records(tmp_path):
    path = tmp_path / "s.db"
    with Store(path) as s:
        s.put(event_record(1))
    with Store(path) as s:
        assert s.get("d1-1") == event_record(1)


def test_survives_hard_process_exit(tmp_path):
    path = tmp_path / "s.db"
    script = textwrap.dedent(f"""
        import os
        from drivefeedback.store import Store, StoreRecord, RecordKind
        s = Store({str(path)!r})
        s.put(StoreRecord.of(RecordKind.TIP, {{"text": "t", "section_id": "HC-1", "grounded": True}}, record_id="tip-1", created_ts=1.0))
        os._exit(0)
    """)
    subprocess.run([sys.executable, "-c", script], check=True)
    with Store(path) as s:
        assert s.get("tip-1").data()["section_id"] == "HC-1"


def test_query_half_open_range(tmp_store):
    tmp_store.put_many([event_record(i) for i in range(10)])
    tmp_store.put(StoreRecord.of(RecordKind.TIP, {"text": "x", "section_id": "s", "grounded": True}, created_ts=3.0))
    got = tmp_store.query(RecordKind.EVENT, (2.0, 5.0))
    assert [r.record_id for r in got] == ["d1-2", "d1-3", "d1-4"]
    assert len(tmp_store.query(RecordKind.EVENT, driver="other")) == 0


def test_payload_validation(tmp_store):
    with pytest.raises(ValidationError):
        tmp_store.put(StoreRecord(RecordKind.EVENT, "{not json"))
    with pytest.raises(ValidationError):
        tmp_store.put(StoreRecord.of(RecordKind.TRIP, {"trip_id": "t"}))
    assert tmp_store.count() == 0


def test_duplicate_id_rejected_unless_ignored(tmp_store):
    tmp_store.put(event_record(1))
    with pytest.raises(Exception):
        tmp_store.put(event_record(1))
    tmp_store.put_many([event_record(1), event_record(2)], ignore_existing=True)
    assert tmp_store.count() == 2


def test_enqueue_unknown_id(tmp_store):
    with pytest.raises(NotFoundError):
        tmp_store.enqueue("missing")


def three_pending(store: Store) -> None:
    store.put_many([event_record(i) for i in range(3)])
    store.enqueue_many(["d1-0", "d1-1", "d1-2"])


def test_offline_flush_is_noop(tmp_store):
    three_pending(tmp_store)
    before = tmp_store.queue()
    rep = tmp_store.flush(OFFLINE, FakeUplink())
    assert (rep.sent, rep.pending) == (0, 3)
    assert tmp_store.queue() == before


def test_flush_all_then_nothing(tmp_store):
    three_pending(tmp_store)
    up = FakeUplink()
    assert tmp_store.flush(ONLINE, up).sent == 3
    assert tmp_store.flush(ONLINE, up).sent == 0
    assert [r.record_id for r in up.received] == ["d1-0", "d1-1", "d1-2"]


def test_failure_on_second_of_three(tmp_store):
    three_pending(tmp_store)
    up = FakeUplink(fail_on={"d1-1"})
    rep = tmp_store.flush(ONLINE, up)
    assert (rep.sent, rep.failed, rep.pending) == (1, 1, 2)
    assert tmp_store.queue() == [
        QueueEntry("d1-0", 0, SyncState.SENT),
        QueueEntry("d1-1", 1, SyncState.PENDING),
        QueueEntry("d1-2", 0, SyncState.PENDING),
    ]
    up.fail_on.clear()
    tmp_store.flush(ONLINE, up)
    assert [r.record_id for r in up.received] == ["d1-0", "d1-1", "d1-2"]


def test_uplink_exception_counts_as_failure(tmp_store):
    three_pending(tmp_store)

    class Broken:
        def send(self, batch):
            raise ConnectionError("down")

    rep = tmp_store.flush(ONLINE, Broken())
    assert rep.sent == 0 and tmp_store.queue()[0].attempts == 1


def test_max_attempts_marks_failed(tmp_path):
    with Store(tmp_path / "s.db", max_attempts=2) as s:
        three_pending(s)
        up = FakeUplink(fail_on={"d1-0"})
        s.flush(ONLINE, up)
        s.flush(ONLINE, up)
        assert s.queue()[0] == QueueEntry("d1-0", 2, SyncState.FAILED)
        # the record itself is never deleted
        assert s.get("d1-0") == event_record(0)


def test_streams_are_independent(tmp_store):
    tmp_store.put_many([event_record(i, "a") for i in range(3)] + [event_record(i, "b", ts=i + 0.5) for i in range(3)])
    tmp_store.enqueue_many([f"{d}-{i}" for d in "ab" for i in range(3)])
    up = FakeUplink(fail_on={"a-0"})
    rep = tmp_store.flush(ONLINE, up)
    assert rep.sent == 3 and [r.record_id for r in up.received] == ["b-0", "b-1", "b-2"]


def first_deliveries(received: list[StoreRecord]) -> dict[str, list[str]]:
    seen: set[str] = set()
    out: dict[str, list[str]] = {}
    for rec in received:
        if rec.record_id not in seen:
            seen.add(rec.record_id)
            out.setdefault(rec.driver_id, []).append(rec.record_id)
    return out


def run_schedule(seed: int, path: Path, steps: int = 25) -> None:
    """Random puts, restarts and flushes; asserts no loss and per-stream order."""
    rng = random.Random(seed)
    drivers = ["d1", "d2", "d3"][: rng.randint(1, 3)]
    store = Store(path)
    put_order: dict[str, list[str]] = {d: [] for d in drivers}
    stored: dict[str, StoreRecord] = {}
    up = FakeUplink(should_fail=lambda rec: rng.random() < 0.3)
    clock = 0
    for _ in range(steps):
        op = rng.choice(["put", "put", "put", "crash", "online", "offline"])
        if op == "put":
            batch = []
            for _ in range(rng.randint(1, 4)):
                clock += 1
                d = rng.choice(drivers)
                rec = event_record(clock, d)
                batch.append(rec)
                put_order[d].append(rec.record_id)
                stored[rec.record_id] = rec
            store.put_many(batch)
            store.enqueue_many([r.record_id for r in batch])
        elif op == "crash":
            store.close()
            store = Store(path)
        elif op == "offline":
            before = store.queue()
            assert store.flush(OFFLINE, up).sent == 0
            assert store.queue() == before
        else:
            store.flush(ONLINE, up)
        for rid, rec in stored.items():
            assert store.get(rid) == rec
        for d, ids in first_deliveries(up.received).items():
            assert ids == put_order[d][: len(ids)]
    up.should_fail = None
    store.flush(ONLINE, up)
    assert first_deliveries(up.received) == {d: ids for d, ids in put_order.items() if ids}
    assert all(e.state is SyncState.SENT for e in store.queue())
    store.close()


@pytest.mark.parametrize("seed", range(40))
def test_random_schedules(seed, tmp_path):
    run_schedule(seed, tmp_path / "s.db")


def test_concurrent_put_and_flush(tmp_store):
    up = FakeUplink()
    stop = threading.Event()

    def flusher():
        while not stop.is_set():
            tmp_store.flush(ONLINE, up)

    th = threading.Thread(target=flusher)
    th.start()
    for i in range(200):
        tmp_store.put(event_record(i))
        tmp_store.enqueue(f"d1-{i}")
    stop.set()
    th.join()
    tmp_store.flush(ONLINE, up)
    assert first_deliveries(up.received) == {"d1": [f"d1-{i}" for i in range(200)]}
    assert tmp_store.count() == 200
