"""Command-line entry point: one subcommand per pipeline stage, plus run-all.

Stages exchange jsonl on files or stdin/stdout; summaries go to stderr so
pipes stay clean. Exit codes: 0 ok, 1 validation error, 2 runtime error,
3 degraded output (a fallback was used).
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import sys
from collections import Counter
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from datetime import date, timedelta
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from . import __version__
from .backends import GenerationBackend
from .classifier import (
    FEATURE_NAMES,
    InsufficientDataError,
    Label,
    LabeledDataset,
    TripFeatures,
    extract_features,
    load_model,
    predict,
    save_model,
    smote_balance,
    train_tree,
)
from .classifier.tree import DecisionTreeModel
from .config import PipelineConfig, load_config
from .errors import DriveFeedbackError, ValidationError
from .evaluation import pairwise_results, survey_correlation
from .events import EventKind, UnsafeEvent, detect_events
from .reports import FinalReport, WeeklyStats, aggregate_week, generate_reports, week_start_of
from .segmenter import Trip, segment_trace
from .store import Connectivity, FileUplink, RecordKind, Store, StoreRecord
from .synth import GroundTruthManifest, ScenarioConfig, generate_corpus, write_corpus
from .telemetry import (
    SensorSample,
    clean_stream,
    derive_kinematics,
    infer_format,
    parse_log,
    to_csv,
    to_jsonl,
)
from .tips import Tip, generate_tip, load_corpus, retrieve, sample_corpus, select_tip_events

EXIT_OK = 0
EXIT_VALIDATION = 1
EXIT_RUNTIME = 2
EXIT_DEGRADED = 3

STDIN_DRIVER = "driver-1"
FEATURES_HEADER = (*FEATURE_NAMES, "label")


def _say(msg: str) -> None:
    print(msg, file=sys.stderr)


# --- codecs -----------------------------------------------------------------


def _dumps(obj: dict) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), ensure_ascii=False)


def _jsonl(objs: Iterable[dict]) -> bytes:
    return "".join(_dumps(o) + "\n" for o in objs).encode("utf-8")


def _read_jsonl(blob: bytes, what: str) -> list[dict]:
    out = []
    for n, line in enumerate(blob.decode("utf-8").splitlines(), 1):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
        except ValueError as exc:
            raise ValidationError(f"{what} line {n} is not JSON: {exc}") from exc
        if not isinstance(obj, dict):
            raise ValidationError(f"{what} line {n} is not an object")
        out.append(obj)
    return out


def _read(path: str | None) -> bytes:
    if path is None or path == "-":
        return sys.stdin.buffer.read()
    try:
        return Path(path).read_bytes()
    except OSError as exc:
        raise ValidationError(f"cannot read {path}: {exc}") from exc


def _write(path: str | Path | None, blob: bytes) -> None:
    if path is None or str(path) == "-":
        sys.stdout.buffer.write(blob)
        sys.stdout.buffer.flush()
        return
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_bytes(blob)


def _decode(fn, objs: list[dict], what: str) -> list:
    try:
        return [fn(o) for o in objs]
    except (KeyError, TypeError, ValueError) as exc:
        raise ValidationError(f"malformed {what} record: {exc}") from exc


def features_csv(rows: Sequence[tuple[TripFeatures, Label | None]]) -> bytes:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(FEATURES_HEADER)
    for f, label in rows:
        w.writerow([repr(v) if isinstance(v, float) else v for v in (f.mean_hour, f.day_of_week, f.speed_std, f.course_std, f.mean_accel_y)]
                   + [label.value if label else ""])
    return buf.getvalue().encode("utf-8")


def read_features_csv(blob: bytes) -> list[tuple[TripFeatures, Label | None]]:
    reader = csv.reader(io.StringIO(blob.decode("utf-8")))
    header = next(reader, None)
    if header is None or tuple(header) != FEATURES_HEADER:
        raise ValidationError(f"features csv header must be {','.join(FEATURES_HEADER)}")
    rows = []
    for n, rec in enumerate(reader, 2):
        if not rec:
            continue
        try:
            f = TripFeatures.from_sequence([float(v) for v in rec[:5]])
            label = Label(rec[5]) if rec[5] else None
        except (ValueError, IndexError) as exc:
            raise ValidationError(f"features csv line {n}: {exc}") from exc
        rows.append((f, label))
    return rows


# --- stages -----------------------------------------------------------------


@dataclass
class LogInput:
    driver_id: str
    blob: bytes
    format: str


def stage_ingest(inputs: Sequence[LogInput], max_gap: float) -> tuple[list[dict], Counter, int, int, int]:
    lines: list[dict] = []
    reasons: Counter = Counter()
    accepted = gaps = clamped = 0
    next_segment: Counter = Counter()
    for item in inputs:
        samples, parsed = parse_log(item.blob, item.format)
        segments, cleaned = clean_stream(samples, max_gap)
        reasons.update(parsed.reasons)
        reasons.update(cleaned.reasons)
        accepted += cleaned.accepted
        gaps += len(cleaned.gaps)
        clamped += cleaned.clamped
        for seg in segments:
            idx = next_segment[item.driver_id]
            next_segment[item.driver_id] += 1
            for s in seg:
                lines.append({"driver_id": item.driver_id, "segment": idx, **s.to_dict()})
    return lines, reasons, accepted, gaps, clamped


def stage_segment(lines: Sequence[dict], cfg: PipelineConfig) -> list[Trip]:
    grouped: dict[str, dict[int, list[SensorSample]]] = {}
    for obj in lines:
        try:
            sample = SensorSample.from_dict({k: obj[k] for k in ("ts", "lat", "lon", "speed", "course", "ax", "ay", "az")})
            grouped.setdefault(str(obj["driver_id"]), {}).setdefault(int(obj["segment"]), []).append(sample)
        except (KeyError, TypeError, ValueError) as exc:
            raise ValidationError(f"malformed sample record: {exc}") from exc
    trips: list[Trip] = []
    for driver, segs in grouped.items():
        kin = [derive_kinematics(segs[i]) for i in sorted(segs)]
        trips.extend(segment_trace(kin, cfg.segmenter, driver))
    return trips


def stage_detect(trips: Sequence[Trip], cfg: PipelineConfig) -> list[tuple[str, UnsafeEvent]]:
    return [(t.driver_id, e) for t in trips for e in detect_events(t, cfg.thresholds)]


def event_record(driver_id: str, e: UnsafeEvent) -> dict:
    return {"driver_id": driver_id, **e.to_dict()}


def stage_features(
    trips: Sequence[Trip], cfg: PipelineConfig, manifest: GroundTruthManifest | None
) -> tuple[list[tuple[Trip, TripFeatures, Label | None]], int]:
    rows, skipped = [], 0
    for t in trips:
        try:
            f = extract_features(t, cfg.tz_offset)
        except InsufficientDataError:
            skipped += 1
            continue
        rows.append((t, f, _truth_label(manifest, t)))
    return rows, skipped


def _truth_label(manifest: GroundTruthManifest | None, trip: Trip) -> Label | None:
    if manifest is None:
        return None
    truth = manifest.truth_for(trip.driver_id, trip.start_ts, trip.end_ts)
    if truth is None:
        return None
    return Label.INFLUENCED if truth.influenced else Label.SOBER


def stage_train(rows: Sequence[tuple[TripFeatures, Label | None]], cfg: PipelineConfig, smote: bool = True):
    labeled = [(f, lab) for f, lab in rows if lab is not None]
    if not labeled:
        raise ValidationError("training needs labeled feature rows")
    data = LabeledDataset(labeled)
    balanced = smote_balance(data, cfg.train) if smote else data
    return train_tree(balanced, cfg.train), data.counts(), balanced.counts()


def recall_line(pairs: Sequence[tuple[Label, Label | None]]) -> str | None:
    known = [(p, t) for p, t in pairs if t is not None]
    if not known:
        return None
    pos = [p for p, t in known if t is Label.INFLUENCED]
    hit = sum(1 for p in pos if p is Label.INFLUENCED)
    flagged = sum(1 for p, _ in known if p is Label.INFLUENCED)
    correct = sum(1 for p, t in known if p is t)
    recall = hit / len(pos) if pos else float("nan")
    precision = hit / flagged if flagged else float("nan")
    return (
        f"recall(Influenced)={recall:.3f} ({hit}/{len(pos)}) "
        f"precision={precision:.3f} accuracy={correct / len(known):.3f}"
    )


def classification_record(trip: Trip, model: DecisionTreeModel, f: TripFeatures) -> tuple[dict, Label]:
    label, path = predict(model, f)
    rec = {
        "trip_id": trip.trip_id,
        "driver_id": trip.driver_id,
        "label": label.value,
        "path": [[name, op, thr] for name, op, thr in path],
    }
    return rec, label


def stage_tips(
    events: Sequence[tuple[str, UnsafeEvent]], cfg: PipelineConfig, backend: GenerationBackend
) -> list[tuple[str, Tip]]:
    corpus = load_corpus(cfg.corpus_path.read_bytes()) if cfg.corpus_path else sample_corpus()
    drivers = {e.trip_id: d for d, e in events}
    chosen = select_tip_events([e for _, e in events])
    model_id = cfg.backend.tip_model_id

    def one(e: UnsafeEvent) -> tuple[str, Tip]:
        return drivers[e.trip_id], generate_tip(backend, retrieve(corpus, e.kind), e, model_id)

    with ThreadPoolExecutor(max_workers=cfg.backend.concurrency) as pool:
        return list(pool.map(one, chosen))


def weekly_stats(
    trips: Sequence[Trip],
    events: Sequence[UnsafeEvent],
    labels: dict[str, Label],
    cfg: PipelineConfig,
    driver: str | None = None,
    week: date | None = None,
) -> list[WeeklyStats]:
    """One WeeklyStats per (driver, week with trips), with deltas against the prior week."""
    out = []
    drivers = sorted({t.driver_id for t in trips})
    for d in drivers:
        if driver is not None and d != driver:
            continue
        weeks = sorted({week_start_of(t.start_ts, cfg.tz_offset) for t in trips if t.driver_id == d})
        for w in weeks:
            if week is not None and w != week:
                continue
            prev = None
            if w != weeks[0]:
                prev = aggregate_week(trips, events, labels, d, w - timedelta(days=7), cfg.tz_offset,
                                      peer_rates=cfg.peer_rates)
            out.append(aggregate_week(trips, events, labels, d, w, cfg.tz_offset, prev, cfg.peer_rates))
    return out


def stage_reports(stats: Sequence[WeeklyStats], cfg: PipelineConfig, backend: GenerationBackend) -> list[FinalReport]:
    return generate_reports(backend, cfg.backend.models, stats, cfg.backend.concurrency, cfg.banned_phrases)


def write_reports(reports: Sequence[FinalReport], out_dir: Path) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    for r in reports:
        (out_dir / r.filename).write_text(r.text, encoding="utf-8")


# --- store helpers ----------------------------------------------------------


def _persist(store: Store | None, kind: RecordKind, items: Iterable[tuple[str, str, dict]]) -> None:
    """Put (record_id, driver, payload) items and queue them for sync."""
    if store is None:
        return
    records = [StoreRecord.of(kind, payload, driver, record_id=rid) for rid, driver, payload in items]
    if records:
        store.put_many(records, ignore_existing=True)
        store.enqueue_many(r.record_id for r in records)


def _event_id(e: UnsafeEvent) -> str:
    return f"event:{e.trip_id}:{e.kind.value}:{e.start_ts!r}"


# --- commands ---------------------------------------------------------------


def _config(args) -> PipelineConfig:
    cfg = load_config(args.config)
    if getattr(args, "tz_offset", None) is not None:
        cfg.tz_offset = args.tz_offset
    if getattr(args, "backend", None) is not None:
        cfg.backend = replace(cfg.backend, kind=args.backend)
    if getattr(args, "model", None) is not None:
        cfg.model_path = Path(args.model)
    if getattr(args, "store", None) is not None:
        cfg.store_path = Path(args.store)
    return cfg


def _open_store(args, cfg: PipelineConfig) -> Store | None:
    if getattr(args, "no_store", False):
        return None
    return Store(cfg.store_path)


def _manifest(path: str | None) -> GroundTruthManifest | None:
    if path is None:
        return None
    try:
        return GroundTruthManifest.from_json(Path(path).read_text(encoding="utf-8"))
    except OSError as exc:
        raise ValidationError(f"cannot read manifest {path}: {exc}") from exc
    except (KeyError, TypeError, ValueError) as exc:
        raise ValidationError(f"malformed manifest {path}: {exc}") from exc


def _log_inputs(paths: Sequence[str], fmt: str | None, driver: str | None) -> list[LogInput]:
    if not paths or paths == ["-"]:
        return [LogInput(driver or STDIN_DRIVER, _read(None), fmt or "csv")]
    out = []
    for p in paths:
        path = Path(p)
        files = sorted(f for f in path.iterdir() if f.suffix in (".csv", ".jsonl", ".ndjson")) if path.is_dir() else [path]
        for f in files:
            out.append(LogInput(driver or f.stem, _read(str(f)), fmt or infer_format(str(f))))
    return out


def trip_line(t: Trip, with_samples: bool = False) -> dict:
    return t.to_dict() if with_samples else t.summary()


def _load_trips(path: str | None, store: Store | None) -> list[Trip]:
    """Trips from a jsonl stream; summary lines are resolved through the store."""
    trips = []
    for obj in _read_jsonl(_read(path), "trip"):
        if isinstance(obj.get("samples"), list):
            trips.extend(_decode(Trip.from_dict, [obj], "trip"))
            continue
        if store is None:
            raise ValidationError("trip summaries need the store (or run segment --with-samples)")
        try:
            rec = store.get(f"trip:{obj['trip_id']}")
        except KeyError as exc:
            raise ValidationError(f"trip {obj.get('trip_id')!r} is not in the store {store.path}") from exc
        trips.append(Trip.from_dict(rec.data()))
    return trips


def _load_events(path: str | None) -> list[tuple[str, UnsafeEvent]]:
    objs = _read_jsonl(_read(path), "event")
    return _decode(lambda o: (str(o.get("driver_id", STDIN_DRIVER)), UnsafeEvent.from_dict(o)), objs, "event")


def _kind_counts(kinds: Iterable[EventKind]) -> str:
    c = Counter(kinds)
    return " ".join(f"{k.value}={c.get(k, 0)}" for k in EventKind)


def cmd_synth(args) -> int:
    cfg = ScenarioConfig(
        seed=args.seed,
        trips=args.trips,
        drivers=args.drivers if args.drivers is not None else (3 if args.out else 1),
        events_per_trip=(0, 0) if args.clean else (args.events_min, args.events_max),
        influenced_fraction=args.influenced_fraction,
    )
    logs, manifest = generate_corpus(cfg)
    if args.out:
        paths = write_corpus(logs, manifest, args.out)
        where = f"{len(paths)} log(s) and manifest.json in {args.out}"
    else:
        if len(logs) != 1:
            raise ValidationError("synth to stdout needs a single driver; use --out for more")
        (samples,) = logs.values()
        _write(None, to_jsonl(samples) if args.format == "jsonl" else to_csv(samples))
        where = "stdout"
    if args.manifest:
        Path(args.manifest).write_text(manifest.to_json() + "\n", encoding="utf-8")
    _say(
        f"synth: {cfg.trips} trips, {len(manifest.events())} injected events "
        f"({_kind_counts(e.kind for e in manifest.events())}), "
        f"{sum(t.influenced for t in manifest.trips)} influenced -> {where}"
    )
    return EXIT_OK


def cmd_ingest(args) -> int:
    cfg = _config(args)
    lines, reasons, accepted, gaps, clamped = stage_ingest(_log_inputs(args.inputs, args.format, args.driver), cfg.max_gap)
    _write(args.output, _jsonl(lines))
    rejected = sum(reasons.values())
    detail = ", ".join(f"{k}={v}" for k, v in sorted(reasons.items()))
    _say(f"ingest: accepted {accepted}, rejected {rejected}" + (f" ({detail})" if detail else "")
         + f", gaps {gaps}, clamped {clamped}")
    return EXIT_OK


def cmd_segment(args) -> int:
    cfg = _config(args)
    trips = stage_segment(_read_jsonl(_read(args.input), "sample"), cfg)
    with _ctx(_open_store(args, cfg)) as store:
        _persist(store, RecordKind.TRIP, ((f"trip:{t.trip_id}", t.driver_id, t.to_dict()) for t in trips))
    _write(args.output, _jsonl(trip_line(t, args.with_samples) for t in trips))
    _say(f"segment: {len(trips)} trips, {sum(t.distance for t in trips):.1f} km")
    return EXIT_OK


def cmd_detect(args) -> int:
    cfg = _config(args)
    with _ctx(_open_store(args, cfg)) as store:
        trips = _load_trips(args.input, store)
        found = stage_detect(trips, cfg)
        _persist(store, RecordKind.EVENT, ((_event_id(e), d, e.to_dict()) for d, e in found))
    _write(args.output, _jsonl(event_record(d, e) for d, e in found))
    msg = f"detect: {len(found)} events in {len(trips)} trips ({_kind_counts(e.kind for _, e in found)})"
    manifest = _manifest(args.manifest)
    if manifest is not None:
        drivers = {t.driver_id for t in trips}
        injected = Counter(e.kind for t in manifest.trips if t.driver_id in drivers for e in t.events)
        got = Counter(e.kind for _, e in found)
        msg += "; matches manifest" if injected == got else f"; manifest has {_kind_counts(injected.elements())}"
    _say(msg)
    return EXIT_OK


def _split(rows: list, fraction: float, seed: int) -> tuple[list, list]:
    """Seeded split stratified by label, preserving input order within each part."""
    rng = np.random.default_rng(seed)
    train_idx: set[int] = set()
    by_label: dict[object, list[int]] = {}
    for i, (_, lab) in enumerate(rows):
        by_label.setdefault(lab, []).append(i)
    for lab in sorted(by_label, key=lambda x: "" if x is None else x.value):
        idx = by_label[lab]
        perm = rng.permutation(len(idx))
        take = int(round(fraction * len(idx)))
        train_idx.update(idx[j] for j in perm[:take])
    train = [r for i, r in enumerate(rows) if i in train_idx]
    test = [r for i, r in enumerate(rows) if i not in train_idx]
    return train, test


def cmd_features(args) -> int:
    cfg = _config(args)
    with _ctx(_open_store(args, cfg)) as store:
        trips = _load_trips(args.input, store)
    rows, skipped = stage_features(trips, cfg, _manifest(args.manifest))
    pairs = [(f, lab) for _, f, lab in rows]
    if args.split is not None:
        if not 0.0 < args.split < 1.0:
            raise ValidationError("--split must be in (0, 1)")
        if not args.holdout:
            raise ValidationError("--split needs --holdout PATH")
        train, test = _split(pairs, args.split, args.seed)
        _write(args.output, features_csv(train))
        _write(args.holdout, features_csv(test))
        _say(f"features: {len(train)} training rows, {len(test)} held-out rows, {skipped} trips skipped")
        return EXIT_OK
    _write(args.output, features_csv(pairs))
    labels = Counter(lab.value for _, lab in pairs if lab)
    _say(f"features: {len(pairs)} rows ({', '.join(f'{k}={v}' for k, v in sorted(labels.items())) or 'unlabeled'}), "
         f"{skipped} trips skipped")
    return EXIT_OK


def cmd_train(args) -> int:
    cfg = _config(args)
    model, before, after = stage_train(read_features_csv(_read(args.input)), cfg, smote=not args.no_smote)
    _write(cfg.model_path, save_model(model))
    _say(
        f"train: {sum(before.values())} rows (Influenced={before[Label.INFLUENCED]} Sober={before[Label.SOBER]}), "
        f"balanced to {after[Label.INFLUENCED]}/{after[Label.SOBER]}, depth {model.depth()}, "
        f"{len(model.nodes)} nodes -> {cfg.model_path}"
    )
    return EXIT_OK


def _load_model_file(path: Path) -> DecisionTreeModel:
    try:
        blob = path.read_bytes()
    except OSError as exc:
        raise ValidationError(f"cannot read model {path}: {exc}") from exc
    return load_model(blob)


def cmd_classify(args) -> int:
    cfg = _config(args)
    model = _load_model_file(cfg.model_path)
    pairs: list[tuple[Label, Label | None]] = []
    records: list[dict] = []
    if args.features:
        for i, (f, truth) in enumerate(read_features_csv(_read(args.features))):
            label, path = predict(model, f)
            records.append({"row": i, "label": label.value, "path": [list(p) for p in path]})
            pairs.append((label, truth))
    else:
        with _ctx(_open_store(args, cfg)) as store:
            rows, _ = stage_features(_load_trips(args.input, store), cfg, _manifest(args.manifest))
            stored = []
            for trip, f, truth in rows:
                rec, label = classification_record(trip, model, f)
                records.append(rec)
                stored.append((f"classification:{trip.trip_id}", trip.driver_id, rec))
                pairs.append((label, truth))
            _persist(store, RecordKind.CLASSIFICATION, stored)
    _write(args.output, _jsonl(records))
    flagged = sum(1 for p, _ in pairs if p is Label.INFLUENCED)
    line = recall_line(pairs)
    if line is not None:
        print(line)
    _say(f"classify: {len(records)} trips, {flagged} flagged Influenced" + (f"; {line}" if line else ""))
    return EXIT_OK


def cmd_tip(args) -> int:
    cfg = _config(args)
    events = _load_events(args.input)
    tips = stage_tips(events, cfg, cfg.backend.build())
    with _ctx(_open_store(args, cfg)) as store:
        _persist(store, RecordKind.TIP, ((f"tip:{t.trip_id}:{t.kind.value}", d, t.to_dict()) for d, t in tips))
    _write(args.output, _jsonl({"driver_id": d, **t.to_dict()} for d, t in tips))
    degraded = sum(t.degraded for _, t in tips)
    _say(f"tip: {len(tips)} tips, {degraded} fallback")
    return EXIT_DEGRADED if degraded else EXIT_OK


def _report_inputs(args, cfg: PipelineConfig, store: Store | None):
    if args.trips:
        trips = _load_trips(args.trips, store)
        events = [e for _, e in _load_events(args.events)] if args.events else []
        labels = {}
        if args.classifications:
            for o in _read_jsonl(_read(args.classifications), "classification"):
                labels[o["trip_id"]] = Label(o["label"])
        return trips, events, labels
    if store is None:
        raise ValidationError("report needs --trips or a store")
    trips = [Trip.from_dict(r.data()) for r in store.query(RecordKind.TRIP)]
    events = [UnsafeEvent.from_dict(r.data()) for r in store.query(RecordKind.EVENT)]
    labels = {r.data()["trip_id"]: Label(r.data()["label"]) for r in store.query(RecordKind.CLASSIFICATION)}
    return trips, events, labels


def cmd_report(args) -> int:
    cfg = _config(args)
    week = date.fromisoformat(args.week) if args.week else None
    with _ctx(_open_store(args, cfg)) as store:
        trips, events, labels = _report_inputs(args, cfg, store)
        stats = weekly_stats(trips, events, labels, cfg, args.driver, week)
        if not stats:
            raise ValidationError("no trips found for the requested driver/week")
        reports = stage_reports(stats, cfg, cfg.backend.build())
        write_reports(reports, Path(args.out_dir))
        _persist(store, RecordKind.REPORT,
                 ((f"report:{r.driver_id}:{r.week_start.isoformat()}", r.driver_id, r.to_dict()) for r in reports))
    fallback = sum(r.degraded for r in reports)
    _say(f"report: {len(reports)} weekly reports in {args.out_dir}, {fallback} fallback")
    return EXIT_DEGRADED if fallback else EXIT_OK


def _read_rates(path: str) -> dict[tuple[str, str], float]:
    reader = csv.DictReader(io.StringIO(_read(path).decode("utf-8")))
    if reader.fieldnames is None or [f.strip() for f in reader.fieldnames] != ["driver_id", "kind", "rate"]:
        raise ValidationError(f"{path}: header must be driver_id,kind,rate")
    out = {}
    for n, row in enumerate(reader, 2):
        try:
            out[(row["driver_id"], row["kind"])] = float(row["rate"])
        except (TypeError, ValueError) as exc:
            raise ValidationError(f"{path} line {n}: {exc}") from exc
    return out


def cmd_eval(args) -> int:
    base, post = _read_rates(args.baseline), _read_rates(args.intervention)
    survey = None
    if args.survey:
        reader = csv.DictReader(io.StringIO(_read(args.survey).decode("utf-8")))
        try:
            survey = {row["driver_id"]: float(row["score"]) for row in reader}
        except (KeyError, TypeError, ValueError) as exc:
            raise ValidationError(f"survey csv needs driver_id,score: {exc}") from exc
    rows = pairwise_results(base, post, sides=args.sides)
    if survey is not None:
        rows.append(survey_correlation(base, post, survey))
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["group", "test", "n", "statistic", "p_value", "method"])
    for r in rows:
        w.writerow([r.group, r.test, r.n, "" if r.statistic is None else repr(r.statistic),
                    "" if r.p_value is None else repr(r.p_value), r.method])
    _write(args.output, buf.getvalue().encode("utf-8"))
    width = max(len(r.group) for r in rows) if rows else 5
    print(f"{'group':<{width}}  {'test':<9} {'n':>3} {'statistic':>10} {'p':>8}  method")
    for r in rows:
        stat = "-" if r.statistic is None else f"{r.statistic:10.4f}"
        p = "-" if r.p_value is None else f"{r.p_value:8.4f}"
        print(f"{r.group:<{width}}  {r.test:<9} {r.n:>3} {stat:>10} {p:>8}  {r.method}")
    _say(f"eval: {len(rows)} results -> {args.output}")
    return EXIT_OK


def cmd_sync(args) -> int:
    cfg = _config(args)
    online = args.online
    with _ctx(Store(cfg.store_path, max_attempts=args.max_attempts)) as store:
        uplink = FileUplink(Path(args.outbox)) if online else None
        report = store.flush(Connectivity.ONLINE if online else Connectivity.OFFLINE, uplink)
    _say(f"sync: {'online' if online else 'offline'}, sent {report.sent}, blocked {report.failed}, pending {report.pending}")
    return EXIT_OK


def cmd_run_all(args) -> int:
    cfg = _config(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    if args.store is None:
        cfg.store_path = out / "store.db"
    manifest = _manifest(args.manifest)
    store = _open_store(args, cfg)
    try:
        lines, reasons, accepted, _, _ = stage_ingest(_log_inputs(args.inputs, args.format, None), cfg.max_gap)
        _write(out / "samples.jsonl", _jsonl(lines))

        trips = stage_segment(lines, cfg)
        _persist(store, RecordKind.TRIP, ((f"trip:{t.trip_id}", t.driver_id, t.to_dict()) for t in trips))
        _write(out / "trips.jsonl", _jsonl(trip_line(t) for t in trips))

        found = stage_detect(trips, cfg)
        _persist(store, RecordKind.EVENT, ((_event_id(e), d, e.to_dict()) for d, e in found))
        _write(out / "events.jsonl", _jsonl(event_record(d, e) for d, e in found))

        rows, _ = stage_features(trips, cfg, manifest)
        pairs = [(f, lab) for _, f, lab in rows]
        _write(out / "features.csv", features_csv(pairs))

        model: DecisionTreeModel | None = None
        model_note = "no model"
        if args.model is not None:
            model = _load_model_file(cfg.model_path)
            model_note = f"loaded {cfg.model_path}"
        elif any(lab is not None for _, lab in pairs):
            model, _, _ = stage_train(pairs, cfg)
            cfg.model_path = out / "model.json"
            _write(cfg.model_path, save_model(model))
            model_note = "trained"
        elif cfg.model_path.is_file():
            model = _load_model_file(cfg.model_path)
            model_note = f"loaded {cfg.model_path}"

        records, labels, stored, verdicts = [], {}, [], []
        if model is not None:
            for trip, f, truth in rows:
                rec, label = classification_record(trip, model, f)
                records.append(rec)
                labels[trip.trip_id] = label
                stored.append((f"classification:{trip.trip_id}", trip.driver_id, rec))
                verdicts.append((label, truth))
        _persist(store, RecordKind.CLASSIFICATION, stored)
        _write(out / "classifications.jsonl", _jsonl(records))

        backend = cfg.backend.build()
        tips = stage_tips(found, cfg, backend)
        _persist(store, RecordKind.TIP, ((f"tip:{t.trip_id}:{t.kind.value}", d, t.to_dict()) for d, t in tips))
        _write(out / "tips.jsonl", _jsonl({"driver_id": d, **t.to_dict()} for d, t in tips))

        stats = weekly_stats(trips, [e for _, e in found], labels, cfg)
        reports = stage_reports(stats, cfg, backend)
        write_reports(reports, out / "reports")
        _persist(store, RecordKind.REPORT,
                 ((f"report:{r.driver_id}:{r.week_start.isoformat()}", r.driver_id, r.to_dict()) for r in reports))
    finally:
        if store is not None:
            store.close()

    degraded = sum(t.degraded for _, t in tips) + sum(r.degraded for r in reports)
    line = recall_line(verdicts)
    _say(
        f"run-all: {accepted} samples ({sum(reasons.values())} rejected), {len(trips)} trips, "
        f"{len(found)} events, {len(records)} classified ({model_note}"
        + (f"; {line}" if line else "")
        + f"), {len(tips)} tips, {len(reports)} reports, {degraded} fallback -> {out}"
    )
    return EXIT_DEGRADED if degraded else EXIT_OK


class _ctx:
    """Context manager that closes an optional store."""

    def __init__(self, store: Store | None):
        self.store = store

    def __enter__(self) -> Store | None:
        return self.store

    def __exit__(self, *exc) -> None:
        if self.store is not None:
            self.store.close()


# --- parser -----------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="pipeline config JSON")
    common.add_argument("--store", help="store path (overrides config)")
    common.add_argument("--no-store", action="store_true", help="do not write records to the store")
    common.add_argument("--tz-offset", type=float, help="local time offset in hours (overrides config)")

    p = argparse.ArgumentParser(prog="drivefeedback", description="Offline driving-behaviour feedback pipeline.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("synth", help="generate a seeded synthetic corpus")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--trips", type=int, default=40)
    s.add_argument("--drivers", type=int)
    s.add_argument("--events-min", type=int, default=8)
    s.add_argument("--events-max", type=int, default=14)
    s.add_argument("--clean", action="store_true", help="inject no events")
    s.add_argument("--influenced-fraction", type=float, default=0.3)
    s.add_argument("--out", help="directory for logs/ and manifest.json (default: one log on stdout)")
    s.add_argument("--manifest", help="also write the manifest here")
    s.add_argument("--format", choices=("csv", "jsonl"), default="csv")
    s.set_defaults(func=cmd_synth)

    s = sub.add_parser("ingest", parents=[common], help="parse and clean raw logs")
    s.add_argument("inputs", nargs="*", help="log files or directories (default stdin)")
    s.add_argument("--format", choices=("csv", "jsonl"))
    s.add_argument("--driver", help="driver id (default: file stem, or driver-1 on stdin)")
    s.add_argument("-o", "--output")
    s.set_defaults(func=cmd_ingest)

    for name, fn, helptext in (
        ("segment", cmd_segment, "cut cleaned samples into trips"),
        ("detect", cmd_detect, "detect unsafe events in trips"),
    ):
        s = sub.add_parser(name, parents=[common], help=helptext)
        s.add_argument("input", nargs="?", default="-")
        s.add_argument("-o", "--output")
        if name == "segment":
            s.add_argument("--with-samples", action="store_true", help="embed samples in each trip line")
        if name == "detect":
            s.add_argument("--manifest", help="compare per-kind counts with a synth manifest")
        s.set_defaults(func=fn)

    s = sub.add_parser("features", parents=[common], help="extract per-trip classifier features")
    s.add_argument("input", nargs="?", default="-")
    s.add_argument("--manifest", help="label rows from a synth manifest")
    s.add_argument("--split", type=float, help="training fraction for a stratified split")
    s.add_argument("--holdout", help="where to write held-out rows when splitting")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("-o", "--output")
    s.set_defaults(func=cmd_features)

    s = sub.add_parser("train", parents=[common], help="train the decision tree")
    s.add_argument("input", nargs="?", default="-", help="labeled features csv")
    s.add_argument("--model", help="model output path (overrides config)")
    s.add_argument("--no-smote", action="store_true")
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("classify", parents=[common], help="classify trips with a trained model")
    s.add_argument("input", nargs="?", default="-", help="trips jsonl")
    s.add_argument("--features", help="classify rows of a features csv instead of trips")
    s.add_argument("--model")
    s.add_argument("--manifest")
    s.add_argument("-o", "--output")
    s.set_defaults(func=cmd_classify)

    s = sub.add_parser("tip", parents=[common], help="generate grounded tips for events")
    s.add_argument("input", nargs="?", default="-")
    s.add_argument("--backend", choices=("auto", "none", "stub", "http"))
    s.add_argument("-o", "--output")
    s.set_defaults(func=cmd_tip)

    s = sub.add_parser("report", parents=[common], help="write weekly reports")
    s.add_argument("--trips", help="trips jsonl (default: read from the store)")
    s.add_argument("--events")
    s.add_argument("--classifications")
    s.add_argument("--driver")
    s.add_argument("--week", help="Monday of the week, YYYY-MM-DD")
    s.add_argument("--out-dir", default="reports")
    s.add_argument("--backend", choices=("auto", "none", "stub", "http"))
    s.set_defaults(func=cmd_report)

    s = sub.add_parser("eval", help="pre/post significance tests on event rates")
    s.add_argument("baseline")
    s.add_argument("intervention")
    s.add_argument("--survey", help="csv driver_id,score to correlate with rate reduction")
    s.add_argument("--sides", choices=("two", "one"), default="two")
    s.add_argument("-o", "--output", default="eval_results.csv")
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("sync", parents=[common], help="flush the sync queue")
    s.add_argument("--online", action="store_true", help="deliver to --outbox (default offline)")
    s.add_argument("--outbox", default="outbox.jsonl")
    s.add_argument("--max-attempts", type=int)
    s.set_defaults(func=cmd_sync)

    s = sub.add_parser("run-all", parents=[common], help="run every stage from raw logs to reports")
    s.add_argument("inputs", nargs="+", help="log files or directories")
    s.add_argument("--out", required=True)
    s.add_argument("--manifest", help="synth manifest providing training labels")
    s.add_argument("--model", help="use this model instead of training")
    s.add_argument("--format", choices=("csv", "jsonl"))
    s.add_argument("--backend", choices=("auto", "none", "stub", "http"))
    s.set_defaults(func=cmd_run_all)
    return p


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ValidationError as exc:
        _say(f"{args.command}: {type(exc).__name__}: {exc}")
        return EXIT_VALIDATION
    except (DriveFeedbackError, OSError) as exc:
        _say(f"{args.command}: {type(exc).__name__}: {exc}")
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
