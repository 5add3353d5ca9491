"""
Ingestion pipeline: staged live points and whole batch files into the store.

Live path (`run_mover`), per sensor and mutually exclusive per sensor:

    snapshot staged range -> journal -> load -> anchor -> resample_1s
    -> simplify -> append -> delete moved range + close journal

Batch path (`ingest_file`): CSV -> per-column resample_1s -> simplify -> append.
"""

from __future__ import annotations

import logging
import math
import threading
from collections.abc import Callable, Iterable, Mapping
from datetime import datetime, timedelta, timezone
from pathlib import Path

import numpy as np
import polars as pl

from app.core.rdp import lerp, simplify
from app.db.staging import StagingStore
from app.errors import FileIngestError, InsufficientDataError
from app.schemas import (
    SECONDS_PER_DAY,
    Gap,
    IngestFileResult,
    MoveReport,
    MoverConfig,
    RowError,
    TimePoint,
    TimeSeries,
    day_start,
)
from app.store.engine import SegmentStore

logger = logging.getLogger("sensorvault.ingest")

TIMESTAMP_COLUMN = "timestamp"

_sensor_locks: dict[int, threading.Lock] = {}
_locks_guard = threading.Lock()


def _utcnow() -> datetime:
    return datetime.now(timezone.utc)


def sensor_lock(sensor: int) -> threading.Lock:
    with _locks_guard:
        return _sensor_locks.setdefault(sensor, threading.Lock())


# ---------------------------------------------------------------------------
# Resampling
# ---------------------------------------------------------------------------
def _gap_seconds(max_gap: timedelta | int) -> int:
    return int(max_gap.total_seconds()) if isinstance(max_gap, timedelta) else int(max_gap)


def resample_arrays(
    timestamps: np.ndarray, values: np.ndarray, max_gap: timedelta | int, sensor: int = 0
) -> TimeSeries:
    """Array form of `resample_1s`; input may be unordered and hold duplicates."""
    ts = np.asarray(timestamps, dtype=np.int64)
    vs = np.asarray(values, dtype=np.float64)
    order = np.argsort(ts, kind="stable")
    ts, vs = ts[order], vs[order]
    last_of_run = np.append(ts[1:] != ts[:-1], True) if ts.size else np.empty(0, dtype=bool)
    ts, vs = ts[last_of_run], vs[last_of_run]
    if ts.size < 2:
        raise InsufficientDataError(f"resampling needs at least 2 distinct timestamps, got {ts.size}")

    limit = _gap_seconds(max_gap)
    grid = np.arange(ts[0], ts[-1] + 1, dtype=np.int64)
    j = np.searchsorted(ts, grid, side="left")
    exact = ts[j] == grid
    seg = j - 1  # interval [ts[seg], ts[seg + 1]] holding an interior grid point
    wide = np.diff(ts) > limit
    keep = exact.copy()
    keep[~exact] = ~wide[seg[~exact]]
    grid, j, exact = grid[keep], j[keep], exact[keep]

    out = np.empty(grid.size, dtype=np.float64)
    out[exact] = vs[j[exact]]
    inner = ~exact
    b = j[inner]
    a = b - 1
    tf = ts.astype(np.float64)
    out[inner] = lerp(grid[inner].astype(np.float64), tf[a], vs[a], tf[b], vs[b])

    gaps = tuple(Gap(start=int(ts[i]), end=int(ts[i + 1])) for i in np.nonzero(wide)[0])
    return TimeSeries(sensor=sensor, timestamps=grid, values=out, gaps=gaps)


def resample_1s(
    points: Iterable[TimePoint], max_gap: timedelta | int = timedelta(minutes=10), sensor: int = 0
) -> TimeSeries:
    """Sort, de-duplicate (last wins) and fill a 1 s grid by linear interpolation.

    Intervals longer than ``max_gap`` are left empty and recorded as gaps.
    """
    pts = list(points)
    ts = np.fromiter((p.timestamp for p in pts), dtype=np.int64, count=len(pts))
    vs = np.fromiter((p.value for p in pts), dtype=np.float64, count=len(pts))
    return resample_arrays(ts, vs, max_gap, sensor)


# ---------------------------------------------------------------------------
# Live mover
# ---------------------------------------------------------------------------
def _on_days(ts: np.ndarray, day_starts: np.ndarray) -> np.ndarray:
    return np.isin(ts - ts % SECONDS_PER_DAY, day_starts)


def _appendable(ts: np.ndarray, anchor_ts: int | None, sealed_starts: np.ndarray) -> np.ndarray:
    mask = ~_on_days(ts, sealed_starts)
    if anchor_ts is not None:
        mask &= ts != anchor_ts
    return mask


def run_mover(
    sensor: int,
    config: MoverConfig,
    store: SegmentStore,
    staging: StagingStore,
    *,
    category: str | None = None,
    clock: Callable[[], datetime] = _utcnow,
) -> MoveReport:
    """Move one sensor's staged points into the store; see module docstring."""
    epsilon = config.epsilon_for(sensor, category)
    with sensor_lock(sensor):
        entry = staging.pending_move(sensor)
        replayed = entry is not None
        if entry is None:
            snap = staging.snapshot(sensor)
            if snap is None or snap.count < 2:
                logger.debug("[run_mover] sensor=%s: %d staged points, skipping", sensor, snap.count if snap else 0)
                return MoveReport(sensor=sensor, epsilon=epsilon, staged_count=snap.count if snap else 0)
            entry = staging.begin_move(sensor, snap, store.last_point(sensor))
        else:
            logger.warning(
                "[run_mover] sensor=%s: replaying unfinished move %s (%s..%s)", sensor, entry.id, entry.first, entry.last
            )

        ts, vs = staging.load(sensor, entry.first, entry.last, entry.snapshot_seq)
        anchor = entry.anchor
        late = ts <= anchor.timestamp if anchor is not None else np.zeros(ts.size, dtype=bool)
        if np.any(late):
            logger.warning(
                "[run_mover] sensor=%s: discarding %d staged points at or before stored history (%s)",
                sensor,
                int(late.sum()),
                anchor.timestamp,
            )
        fresh_ts, fresh_vs = ts[~late], vs[~late]

        sealed_starts = np.array([day_start(d) for d, sealed in store.days(sensor) if sealed], dtype=np.int64)
        on_sealed = _on_days(fresh_ts, sealed_starts)
        if np.any(on_sealed):
            logger.warning(
                "[run_mover] sensor=%s: discarding %d staged points that fall on sealed days",
                sensor,
                int(on_sealed.sum()),
            )
        fresh_ts, fresh_vs = fresh_ts[~on_sealed], fresh_vs[~on_sealed]

        gaps: list[Gap] = []
        resampled = kept = appended = 0
        if fresh_ts.size:
            use_anchor = anchor is not None and int(fresh_ts.min()) - anchor.timestamp <= config.max_gap_seconds
            if anchor is not None and not use_anchor:
                gaps.append(Gap(start=anchor.timestamp, end=int(fresh_ts.min())))
            if use_anchor:
                fresh_ts = np.concatenate([[anchor.timestamp], fresh_ts])
                fresh_vs = np.concatenate([[anchor.value], fresh_vs])

            if np.unique(fresh_ts).size >= 2:
                series = resample_arrays(fresh_ts, fresh_vs, config.max_gap, sensor)
                compressed = simplify(series, epsilon, config.metric)
                gaps.extend(series.gaps)
                # the anchor is already stored and only shapes the first chord; grid points
                # interpolated between it and midnight may sit on a sealed day
                drop = anchor.timestamp if use_anchor else None
                series = series.select(_appendable(series.timestamps, drop, sealed_starts))
                compressed = compressed.select(_appendable(compressed.timestamps, drop, sealed_starts))
            else:
                series = compressed = TimeSeries(sensor=sensor, timestamps=fresh_ts[:1], values=fresh_vs[-1:])
            resampled, kept = len(series), len(compressed)
            # an append failure propagates and leaves staging and the journal untouched
            appended = store.append(sensor, compressed, gaps=gaps)

        executed_at = staging.finish_move(entry, clock())

    report = MoveReport(
        sensor=sensor,
        first=entry.first,
        last=entry.last,
        staged_count=int(ts.size),
        resampled_count=resampled,
        kept_count=kept,
        appended_count=appended,
        late_count=int(late.sum()),
        sealed_count=int(on_sealed.sum()),
        epsilon=epsilon,
        gaps=sorted(set(gaps), key=lambda g: g.start),
        replayed=replayed,
        executed_at=executed_at,
    )
    logger.info(
        "[run_mover] sensor=%s range=%s..%s staged=%d resampled=%d kept=%d appended=%d late=%d sealed=%d gaps=%d",
        sensor,
        report.first,
        report.last,
        report.staged_count,
        report.resampled_count,
        report.kept_count,
        report.appended_count,
        report.late_count,
        report.sealed_count,
        len(report.gaps),
    )
    return report


# ---------------------------------------------------------------------------
# Batch files
# ---------------------------------------------------------------------------
def parse_timestamp(raw: str) -> int:
    """Integer epoch seconds or ISO-8601 (naive means UTC)."""
    text = raw.strip()
    if not text:
        raise ValueError("empty timestamp")
    try:
        return int(text)
    except ValueError:
        pass
    parsed = datetime.fromisoformat(text.replace("Z", "+00:00"))
    if parsed.tzinfo is None:
        parsed = parsed.replace(tzinfo=timezone.utc)
    return math.floor(parsed.timestamp())


def default_sensor_map(columns: Iterable[str]) -> dict[str, int]:
    """Columns named by an integer map to that sensor id."""
    return {c: int(c) for c in columns if c.strip().isdigit()}


def read_measurement_csv(
    path: Path | str, sensor_map: Mapping[str, int] | None = None
) -> tuple[dict[int, tuple[np.ndarray, np.ndarray]], list[RowError], int, int]:
    """Parse a batch CSV into per-sensor (timestamps, values) arrays.

    Returns (columns, row_errors, total_rows, valid_rows). Empty cells are
    missing values; bad timestamps or values are collected, never raised.
    """
    path = Path(path)
    try:
        frame = pl.read_csv(path, infer_schema=False)
    except (OSError, pl.exceptions.PolarsError) as exc:
        raise FileIngestError(f"{path}: cannot read CSV: {exc}") from exc
    if not frame.columns or frame.columns[0].strip().lower() != TIMESTAMP_COLUMN:
        raise FileIngestError(f"{path}: first column must be '{TIMESTAMP_COLUMN}'")

    ts_col = frame.columns[0]
    mapping = dict(sensor_map) if sensor_map is not None else default_sensor_map(frame.columns[1:])
    unknown = [c for c in mapping if c not in frame.columns]
    if unknown:
        raise FileIngestError(f"{path}: mapped columns not in file: {', '.join(unknown)}")
    ignored = [c for c in frame.columns[1:] if c not in mapping]
    if ignored:
        logger.warning("[read_measurement_csv] %s: ignoring unmapped columns %s", path, ignored)
    if not mapping:
        raise FileIngestError(f"{path}: no sensor columns to ingest")

    errors: list[RowError] = []
    raw_ts = frame[ts_col].to_list()
    ts = np.zeros(len(raw_ts), dtype=np.int64)
    ts_ok = np.zeros(len(raw_ts), dtype=bool)
    for i, raw in enumerate(raw_ts):
        try:
            ts[i] = parse_timestamp(raw or "")
            ts_ok[i] = True
        except ValueError as exc:
            errors.append(RowError(line=i + 2, column=ts_col, message=str(exc)))

    row_ok = ts_ok.copy()
    columns: dict[int, tuple[np.ndarray, np.ndarray]] = {}
    for name, sensor in mapping.items():
        raw = frame[name].str.strip_chars()
        present = (raw.is_not_null() & (raw != "")).to_numpy()
        values = raw.cast(pl.Float64, strict=False).to_numpy()
        bad = present & ~np.isfinite(values)
        for i in np.nonzero(bad & ts_ok)[0]:
            errors.append(RowError(line=int(i) + 2, column=name, message=f"not a finite number: {raw[int(i)]!r}"))
        row_ok &= ~bad
        use = ts_ok & present & ~bad
        columns[sensor] = (ts[use], values[use])

    errors.sort(key=lambda e: (e.line, e.column))
    return columns, errors, frame.height, int(row_ok.sum())


def ingest_file(
    path: Path | str,
    sensor_map: Mapping[str, int] | None,
    config: MoverConfig,
    store: SegmentStore,
    *,
    categories: Mapping[int, str] | None = None,
    clock: Callable[[], datetime] = _utcnow,
) -> IngestFileResult:
    """Compress a whole batch file straight into the store (no staging)."""
    columns, errors, total, valid = read_measurement_csv(path, sensor_map)
    if valid == 0:
        raise FileIngestError(f"{path}: no valid rows ({len(errors)} row errors)")
    if errors:
        logger.warning("[ingest_file] %s: %d row errors, continuing with %d valid rows", path, len(errors), valid)

    reports: list[MoveReport] = []
    for sensor, (ts, vs) in columns.items():
        epsilon = config.epsilon_for(sensor, (categories or {}).get(sensor))
        try:
            series = resample_arrays(ts, vs, config.max_gap, sensor)
        except InsufficientDataError:
            logger.warning("[ingest_file] %s: sensor %s has fewer than 2 values, skipped", path, sensor)
            reports.append(MoveReport(sensor=sensor, staged_count=int(ts.size), epsilon=epsilon, executed_at=clock()))
            continue
        with sensor_lock(sensor):
            compressed = simplify(series, epsilon, config.metric)
            appended = store.append(sensor, compressed)
        reports.append(
            MoveReport(
                sensor=sensor,
                first=int(series.timestamps[0]),
                last=int(series.timestamps[-1]),
                staged_count=int(ts.size),
                resampled_count=len(series),
                kept_count=len(compressed),
                appended_count=appended,
                epsilon=epsilon,
                gaps=list(series.gaps),
                executed_at=clock(),
            )
        )
        logger.info(
            "[ingest_file] %s sensor=%s rows=%d resampled=%d kept=%d appended=%d",
            Path(path).name,
            sensor,
            ts.size,
            len(series),
            len(compressed),
            appended,
        )
    return IngestFileResult(path=str(path), total_rows=total, valid_rows=valid, reports=reports, row_errors=errors)
