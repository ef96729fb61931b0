"""Local-first record store with an at-least-once sync queue.

Backed by a single SQLite file in WAL mode with ``synchronous=FULL``, so a
``put`` has reached disk before it returns. Sync sends pending entries per
driver stream in creation order and stops a stream at its first failure, so
later records are never delivered ahead of an earlier undelivered one.
"""

from __future__ import annotations

import json
import sqlite3
import threading
import time
import uuid
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Iterable, Protocol, Sequence

from .errors import DriveFeedbackError, ValidationError


class StorageError(DriveFeedbackError):
    pass


class NotFoundError(DriveFeedbackError, KeyError):
    pass


class RecordKind(str, Enum):
    SAMPLE = "Sample"
    TRIP = "Trip"
    EVENT = "Event"
    CLASSIFICATION = "Classification"
    TIP = "Tip"
    REPORT = "Report"


class SyncState(str, Enum):
    PENDING = "Pending"
    SENT = "Sent"
    FAILED = "Failed"


class Connectivity(str, Enum):
    ONLINE = "Online"
    OFFLINE = "Offline"


# fields each payload must carry to decode back into its domain type
_REQUIRED = {
    RecordKind.SAMPLE: {"ts", "lat", "lon", "speed", "course", "ax", "ay", "az"},
    RecordKind.TRIP: {"trip_id", "start_ts", "end_ts", "distance", "samples"},
    RecordKind.EVENT: {"trip_id", "kind", "start_ts", "end_ts", "peak_value", "threshold_at_trigger", "severity"},
    RecordKind.CLASSIFICATION: {"trip_id", "label", "path"},
    RecordKind.TIP: {"text", "section_id", "grounded"},
    RecordKind.REPORT: {"text", "week_start", "driver_id", "provenance"},
}


@dataclass(frozen=True)
class StoreRecord:
    kind: RecordKind
    payload: str
    driver_id: str = "driver"
    record_id: str = field(default_factory=lambda: uuid.uuid4().hex)
    created_ts: float = field(default_factory=time.time)

    @classmethod
    def of(cls, kind: RecordKind, obj: dict, driver_id: str = "driver", **kw) -> "StoreRecord":
        return cls(kind, json.dumps(obj, sort_keys=True, separators=(",", ":")), driver_id, **kw)

    def data(self) -> dict:
        return json.loads(self.payload)


def validate_payload(record: StoreRecord) -> None:
    try:
        obj = json.loads(record.payload)
    except ValueError as exc:
        raise ValidationError(f"record {record.record_id} payload is not JSON") from exc
    if not isinstance(obj, dict):
        raise ValidationError(f"record {record.record_id} payload must be an object")
    missing = _REQUIRED[record.kind] - set(obj)
    if missing:
        raise ValidationError(f"{record.kind.value} payload missing {sorted(missing)}")


@dataclass(frozen=True)
class QueueEntry:
    record_id: str
    attempts: int
    state: SyncState


@dataclass
class FlushReport:
    sent: int = 0
    failed: int = 0
    pending: int = 0


class Uplink(Protocol):
    def send(self, batch: Sequence[StoreRecord]) -> Iterable[str]:
        """Deliver a batch; return the record ids acknowledged."""


_SCHEMA = """
CREATE TABLE IF NOT EXISTS records (
    seq INTEGER PRIMARY KEY AUTOINCREMENT,
    record_id TEXT NOT NULL UNIQUE,
    kind TEXT NOT NULL,
    driver_id TEXT NOT NULL,
    created_ts REAL NOT NULL,
    payload TEXT NOT NULL
);
CREATE INDEX IF NOT EXISTS records_kind_ts ON records(kind, created_ts);
CREATE TABLE IF NOT EXISTS sync_queue (
    record_id TEXT PRIMARY KEY REFERENCES records(record_id),
    attempts INTEGER NOT NULL DEFAULT 0,
    state TEXT NOT NULL
);
"""


class Store:
    def __init__(self, path: str | Path, max_attempts: int | None = None):
        self.path = Path(path)
        self.max_attempts = max_attempts
        self._write_lock = threading.Lock()
        try:
            self._conn = sqlite3.connect(self.path, check_same_thread=False, isolation_level=None)
            self._conn.execute("PRAGMA journal_mode=WAL")
            self._conn.execute("PRAGMA synchronous=FULL")
            self._conn.executescript(_SCHEMA)
        except sqlite3.Error as exc:
            raise StorageError(f"cannot open store at {self.path}: {exc}") from exc

    def close(self) -> None:
        self._conn.close()

    def __enter__(self) -> "Store":
        return self

    def __exit__(self, *exc) -> None:
        self.close()

    def _write(self, fn):
        with self._write_lock:
            try:
                self._conn.execute("BEGIN IMMEDIATE")
                try:
                    result = fn(self._conn)
                except BaseException:
                    self._conn.execute("ROLLBACK")
                    raise
                self._conn.execute("COMMIT")
                return result
            except sqlite3.Error as exc:
                raise StorageError(f"store write failed: {exc}") from exc

    def put(self, record: StoreRecord) -> str:
        return self.put_many([record])[0]

    def put_many(self, records: Sequence[StoreRecord], ignore_existing: bool = False) -> list[str]:
        """Insert records in one durable transaction.

        With ``ignore_existing`` a record whose id is already stored is left
        untouched, which makes re-running a deterministic stage harmless.
        """
        for r in records:
            validate_payload(r)
        verb = "INSERT OR IGNORE" if ignore_existing else "INSERT"

        def tx(conn):
            conn.executemany(
                f"{verb} INTO records(record_id, kind, driver_id, created_ts, payload) VALUES (?,?,?,?,?)",
                [(r.record_id, r.kind.value, r.driver_id, r.created_ts, r.payload) for r in records],
            )

        self._write(tx)
        return [r.record_id for r in records]

    @staticmethod
    def _row(row) -> StoreRecord:
        record_id, kind, driver_id, created_ts, payload = row
        return StoreRecord(RecordKind(kind), payload, driver_id, record_id, created_ts)

    def get(self, record_id: str) -> StoreRecord:
        row = self._conn.execute(
            "SELECT record_id, kind, driver_id, created_ts, payload FROM records WHERE record_id=?",
            (record_id,),
        ).fetchone()
        if row is None:
            raise NotFoundError(record_id)
        return self._row(row)

    def query(
        self,
        kind: RecordKind,
        time_range: tuple[float, float] | None = None,
        driver: str | None = None,
    ) -> list[StoreRecord]:
        """Records of a kind with created_ts in [t0, t1), oldest first."""
        sql = "SELECT record_id, kind, driver_id, created_ts, payload FROM records WHERE kind=?"
        args: list = [kind.value]
        if time_range is not None:
            sql += " AND created_ts >= ? AND created_ts < ?"
            args += list(time_range)
        if driver is not None:
            sql += " AND driver_id=?"
            args.append(driver)
        sql += " ORDER BY created_ts, seq"
        return [self._row(r) for r in self._conn.execute(sql, args).fetchall()]

    def count(self) -> int:
        return self._conn.execute("SELECT COUNT(*) FROM records").fetchone()[0]

    # --- sync -------------------------------------------------------------

    def enqueue(self, record_id: str) -> None:
        def tx(conn):
            if conn.execute("SELECT 1 FROM records WHERE record_id=?", (record_id,)).fetchone() is None:
                raise NotFoundError(record_id)
            conn.execute(
                "INSERT OR IGNORE INTO sync_queue(record_id, attempts, state) VALUES (?, 0, ?)",
                (record_id, SyncState.PENDING.value),
            )

        self._write(tx)

    def enqueue_many(self, record_ids: Iterable[str]) -> None:
        ids = list(record_ids)

        def tx(conn):
            for rid in ids:
                if conn.execute("SELECT 1 FROM records WHERE record_id=?", (rid,)).fetchone() is None:
                    raise NotFoundError(rid)
            conn.executemany(
                "INSERT OR IGNORE INTO sync_queue(record_id, attempts, state) VALUES (?, 0, ?)",
                [(rid, SyncState.PENDING.value) for rid in ids],
            )

        self._write(tx)

    def queue(self) -> list[QueueEntry]:
        rows = self._conn.execute(
            "SELECT q.record_id, q.attempts, q.state FROM sync_queue q "
            "JOIN records r ON r.record_id = q.record_id ORDER BY r.created_ts, r.seq"
        ).fetchall()
        return [QueueEntry(rid, attempts, SyncState(state)) for rid, attempts, state in rows]

    def _pending_by_driver(self) -> dict[str, list[StoreRecord]]:
        rows = self._conn.execute(
            "SELECT r.record_id, r.kind, r.driver_id, r.created_ts, r.payload FROM sync_queue q "
            "JOIN records r ON r.record_id = q.record_id WHERE q.state=? ORDER BY r.created_ts, r.seq",
            (SyncState.PENDING.value,),
        ).fetchall()
        streams: dict[str, list[StoreRecord]] = {}
        for row in rows:
            rec = self._row(row)
            streams.setdefault(rec.driver_id, []).append(rec)
        return streams

    def flush(self, connectivity: Connectivity, uplink: Uplink | None) -> FlushReport:
        report = FlushReport()
        if connectivity is Connectivity.OFFLINE or uplink is None:
            report.pending = sum(1 for e in self.queue() if e.state is SyncState.PENDING)
            return report
        for driver, batch in self._pending_by_driver().items():
            try:
                acked = set(uplink.send(batch))
            except Exception:
                acked = set()
            delivered: list[str] = []
            blocked: str | None = None
            for rec in batch:
                if rec.record_id not in acked:
                    blocked = rec.record_id
                    break
                delivered.append(rec.record_id)

            def tx(conn, delivered=delivered, blocked=blocked):
                conn.executemany(
                    "UPDATE sync_queue SET state=? WHERE record_id=?",
                    [(SyncState.SENT.value, rid) for rid in delivered],
                )
                if blocked is not None:
                    conn.execute("UPDATE sync_queue SET attempts = attempts + 1 WHERE record_id=?", (blocked,))
                    if self.max_attempts is not None:
                        conn.execute(
                            "UPDATE sync_queue SET state=? WHERE record_id=? AND attempts >= ?",
                            (SyncState.FAILED.value, blocked, self.max_attempts),
                        )

            self._write(tx)
            report.sent += len(delivered)
            report.failed += blocked is not None
        report.pending = sum(1 for e in self.queue() if e.state is SyncState.PENDING)
        return report


@dataclass
class FakeUplink:
    """In-process uplink; ``fail_on`` ids (or a flaky predicate) are rejected."""

    fail_on: set[str] = field(default_factory=set)
    received: list[StoreRecord] = field(default_factory=list)
    should_fail: object = None

    def send(self, batch: Sequence[StoreRecord]) -> list[str]:
        acked = []
        for rec in batch:
            if rec.record_id in self.fail_on or (callable(self.should_fail) and self.should_fail(rec)):
                break
            self.received.append(rec)
            acked.append(rec.record_id)
        return acked


@dataclass
class FileUplink:
    """Appends delivered records to a jsonl outbox file (stands in for a server)."""

    path: Path

    def send(self, batch: Sequence[StoreRecord]) -> list[str]:
        with open(self.path, "a", encoding="utf-8") as fh:
            for rec in batch:
                fh.write(
                    json.dumps(
                        {
                            "record_id": rec.record_id,
                            "kind": rec.kind.value,
                            "driver_id": rec.driver_id,
                            "created_ts": rec.created_ts,
                            "payload": rec.data(),
                        },
                        sort_keys=True,
                    )
                    + "\n"
                )
        return [rec.record_id for rec in batch]
