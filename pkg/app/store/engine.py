"""
Day-bucketed segment store for compressed points.

Directory layout::

    <root>/<sensor_id>/<YYYY-MM-DD>.seg   sealed, checksummed segments
    <root>/<sensor_id>/wal.log            open day buckets (write-ahead log)

One writer per sensor (the mover or a file ingest) and any number of readers.
Open buckets are immutable snapshots swapped in after every append, so
readers never take the writer lock.
"""

from __future__ import annotations

import logging
import threading
from collections.abc import Callable, Iterable
from dataclasses import dataclass
from datetime import date, datetime, timezone
from pathlib import Path

import numpy as np

from app.core.rdp import reconstruct
from app.errors import (
    ConflictError,
    InvalidArgumentError,
    NothingToSealError,
    NotYetSealableError,
    SealedSegmentError,
    UnknownSensorError,
    UnregisteredSensorError,
)
from app.schemas import SECONDS_PER_DAY, Gap, QuerySpec, TimePoint, TimeSeries, adjacent_gaps, utc_day
from app.store.segment import Segment, read_segment, write_segment
from app.store.wal import GapRecord, PointsRecord, WriteAheadLog

logger = logging.getLogger("sensorvault.store")

WAL_NAME = "wal.log"


def _utcnow() -> datetime:
    return datetime.now(timezone.utc)


@dataclass(frozen=True)
class _Bucket:
    """Snapshot of one open (sensor, day) bucket."""

    timestamps: np.ndarray
    values: np.ndarray
    gaps: frozenset[Gap] = frozenset()

    @classmethod
    def empty(cls) -> _Bucket:
        return cls(np.empty(0, dtype=np.int64), np.empty(0, dtype=np.float64))

    def merged(self, ts: np.ndarray, vs: np.ndarray, gaps: Iterable[Gap] = ()) -> _Bucket:
        all_ts = np.concatenate([self.timestamps, ts])
        all_vs = np.concatenate([self.values, vs])
        order = np.argsort(all_ts, kind="stable")
        return _Bucket(all_ts[order], all_vs[order], self.gaps | frozenset(gaps))


class SegmentStore:
    def __init__(
        self,
        root: Path | str,
        *,
        is_registered: Callable[[int], bool] | None = None,
        clock: Callable[[], datetime] = _utcnow,
    ):
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)
        self._is_registered = is_registered
        self._clock = clock
        self._open: dict[int, dict[date, _Bucket]] = {}
        self._sealed: dict[int, dict[date, Path]] = {}
        self._wals: dict[int, WriteAheadLog] = {}
        self._locks: dict[int, threading.Lock] = {}
        self._meta_lock = threading.Lock()
        for child in sorted(self.root.iterdir()):
            if child.is_dir() and child.name.isdigit():
                self._load_sensor(int(child.name))
        logger.info("[store] opened %s with %d sensors", self.root, len(self._open))

    # -- lifecycle ----------------------------------------------------------
    def _sensor_dir(self, sensor: int) -> Path:
        return self.root / str(sensor)

    def _load_sensor(self, sensor: int) -> None:
        directory = self._sensor_dir(sensor)
        sealed = {date.fromisoformat(p.stem): p for p in sorted(directory.glob("*.seg"))}
        wal = WriteAheadLog(directory / WAL_NAME)
        buckets: dict[date, _Bucket] = {}
        for record in wal.records:
            if isinstance(record, PointsRecord):
                ts = np.asarray(record.timestamps, dtype=np.int64)
                vs = np.asarray(record.values, dtype=np.float64)
                for day, idx in self._group_by_day(ts):
                    buckets[day] = buckets.get(day, _Bucket.empty()).merged(ts[idx], vs[idx])
            else:
                day = utc_day(record.gap.end)
                buckets[day] = buckets.get(day, _Bucket.empty()).merged(
                    np.empty(0, np.int64), np.empty(0), [record.gap]
                )
        stale = [d for d in buckets if d in sealed]
        for day in stale:
            # crash after writing the segment but before compacting the log
            logger.warning("[store] sensor=%s day=%s already sealed; dropping WAL copy", sensor, day)
            del buckets[day]
        self._open[sensor] = buckets
        self._sealed[sensor] = sealed
        self._wals[sensor] = wal
        self._locks[sensor] = threading.Lock()
        if stale:
            wal.rewrite(self._wal_records(buckets))

    def _ensure_sensor(self, sensor: int) -> None:
        with self._meta_lock:
            if sensor not in self._open:
                self._sensor_dir(sensor).mkdir(parents=True, exist_ok=True)
                self._load_sensor(sensor)

    def close(self) -> None:
        for wal in self._wals.values():
            wal.close()

    def __enter__(self) -> SegmentStore:
        return self

    def __exit__(self, *exc) -> None:
        self.close()

    # -- helpers --------------------------------------------------------------
    @staticmethod
    def _group_by_day(ts: np.ndarray) -> list[tuple[date, np.ndarray]]:
        if ts.size == 0:
            return []
        day_idx = ts // SECONDS_PER_DAY
        groups = []
        for d in np.unique(day_idx):
            groups.append((utc_day(int(d) * SECONDS_PER_DAY), np.nonzero(day_idx == d)[0]))
        return groups

    @staticmethod
    def _wal_records(buckets: dict[date, _Bucket]) -> list[PointsRecord | GapRecord]:
        records: list[PointsRecord | GapRecord] = []
        for day in sorted(buckets):
            b = buckets[day]
            if b.timestamps.size:
                records.append(PointsRecord(timestamps=b.timestamps.tolist(), values=b.values.tolist()))
            records.extend(GapRecord(gap=g) for g in sorted(b.gaps, key=lambda g: g.start))
        return records

    def require_sensor(self, sensor: int) -> None:
        if self._is_registered is not None:
            if not self._is_registered(sensor):
                raise UnknownSensorError(f"sensor {sensor} is not registered")
        elif sensor not in self._open:
            raise UnknownSensorError(f"sensor {sensor} has no data in {self.root}")

    def segment(self, sensor: int, day: date) -> Segment:
        """Decode a sealed day from disk; the checksum is verified on every read."""
        return read_segment(self._sealed[sensor][day])

    def _day_series(self, sensor: int, day: date) -> TimeSeries:
        if day in self._sealed.get(sensor, {}):
            return self.segment(sensor, day).to_series()
        bucket = self._open.get(sensor, {}).get(day)
        if bucket is None:
            return TimeSeries.empty(sensor)
        return TimeSeries(
            sensor=sensor,
            timestamps=bucket.timestamps,
            values=bucket.values,
            gaps=adjacent_gaps(bucket.timestamps, bucket.gaps),
        )

    def _day_gaps(self, sensor: int, day: date) -> frozenset[Gap]:
        """Every recorded gap ending on ``day``; its start may lie on an earlier day."""
        if day in self._sealed.get(sensor, {}):
            return frozenset(self.segment(sensor, day).gaps)
        bucket = self._open.get(sensor, {}).get(day)
        return bucket.gaps if bucket is not None else frozenset()

    def days(self, sensor: int) -> list[tuple[date, bool]]:
        """(day, sealed) for every day holding data, ascending."""
        sealed = self._sealed.get(sensor, {})
        open_days = self._open.get(sensor, {})
        return sorted([(d, True) for d in sealed] + [(d, False) for d in open_days if d not in sealed])

    def sensors(self) -> list[int]:
        return sorted(self._open)

    # -- append ---------------------------------------------------------------
    def append(self, sensor: int, points: TimeSeries, gaps: Iterable[Gap] = ()) -> int:
        """Route points into day buckets; returns how many were new.

        Re-appending a stored (timestamp, value) is a no-op; the same
        timestamp with another value is a conflict. The whole batch is
        validated before anything is written.
        """
        if self._is_registered is not None and not self._is_registered(sensor):
            raise UnregisteredSensorError(f"sensor {sensor} is not registered")
        if points.sensor not in (0, sensor):
            raise InvalidArgumentError(f"series belongs to sensor {points.sensor}, not {sensor}")
        self._ensure_sensor(sensor)

        all_gaps = set(points.gaps) | set(gaps)
        with self._locks[sensor]:
            plan: list[tuple[date, np.ndarray, np.ndarray, set[Gap]]] = []
            ts_all, vs_all = points.timestamps, points.values
            gap_days: dict[date, set[Gap]] = {}
            for g in all_gaps:
                gap_days.setdefault(utc_day(g.end), set()).add(g)
            grouped = {day: idx for day, idx in self._group_by_day(ts_all)}
            for day in sorted(set(grouped) | set(gap_days)):
                idx = grouped.get(day, np.empty(0, dtype=np.intp))
                ts, vs = ts_all[idx], vs_all[idx]
                existing = self._day_series(sensor, day)
                pos = np.searchsorted(existing.timestamps, ts)
                found = pos < len(existing)
                found[found] = existing.timestamps[pos[found]] == ts[found]
                if np.any(found):
                    clash = existing.values[pos[found]] != vs[found]
                    if np.any(clash):
                        t = int(ts[found][np.argmax(clash)])
                        raise ConflictError(f"sensor {sensor} already stores a different value at {t}")
                new_gaps = gap_days.get(day, set()) - self._day_gaps(sensor, day)
                new = ~found
                if not np.any(new) and not new_gaps:
                    continue
                if day in self._sealed.get(sensor, {}):
                    raise SealedSegmentError(f"sensor {sensor} day {day} is sealed")
                plan.append((day, ts[new], vs[new], new_gaps))

            if not plan:
                return 0
            records: list[PointsRecord | GapRecord] = []
            new_ts = np.concatenate([p[1] for p in plan])
            if new_ts.size:
                records.append(
                    PointsRecord(timestamps=new_ts.tolist(), values=np.concatenate([p[2] for p in plan]).tolist())
                )
            for _, _, _, gs in plan:
                records.extend(GapRecord(gap=g) for g in sorted(gs, key=lambda g: g.start))
            self._wals[sensor].append(records)

            buckets = dict(self._open[sensor])
            for day, ts, vs, gs in plan:
                buckets[day] = buckets.get(day, _Bucket.empty()).merged(ts, vs, gs)
            self._open[sensor] = buckets

        logger.debug("[append] sensor=%s: %d new points over %d days", sensor, new_ts.size, len(plan))
        return int(new_ts.size)

    # -- seal -----------------------------------------------------------------
    def seal_day(self, sensor: int, day: date) -> Segment:
        self.require_sensor(sensor)
        self._ensure_sensor(sensor)
        with self._locks[sensor]:
            if day in self._sealed[sensor]:
                return self.segment(sensor, day)
            if day >= self._clock().date():
                raise NotYetSealableError(f"day {day} has not fully elapsed in UTC")
            bucket = self._open[sensor].get(day)
            if bucket is None or bucket.timestamps.size == 0:
                raise NothingToSealError(f"sensor {sensor} has no open data for {day}")

            series = self._day_series(sensor, day)
            path = self._sensor_dir(sensor) / f"{day.isoformat()}.seg"
            segment = write_segment(path, Segment.from_series(series, day, gaps=bucket.gaps))
            self._sealed[sensor] = {**self._sealed[sensor], day: path}
            buckets = {d: b for d, b in self._open[sensor].items() if d != day}
            self._open[sensor] = buckets
            self._wals[sensor].rewrite(self._wal_records(buckets))
        logger.info("[seal_day] sensor=%s day=%s sealed with %d points", sensor, day, segment.count)
        return segment

    # -- read -----------------------------------------------------------------
    def _raw(self, sensor: int, start: int, end: int) -> TimeSeries:
        first_day, last_day = utc_day(start), utc_day(end)
        parts = [self._day_series(sensor, d) for d, _ in self.days(sensor) if first_day <= d <= last_day]
        parts = [p for p in parts if len(p)]
        if not parts:
            return TimeSeries.empty(sensor)
        ts = np.concatenate([p.timestamps for p in parts])
        vs = np.concatenate([p.values for p in parts])
        gaps = self._gaps_near(sensor, first_day, last_day)
        merged = TimeSeries(sensor=sensor, timestamps=ts, values=vs, gaps=adjacent_gaps(ts, gaps))
        return merged.between(start, end)

    def _gaps_near(self, sensor: int, first_day: date, last_day: date) -> set[Gap]:
        gaps: set[Gap] = set()
        for d, _ in self.days(sensor):
            if first_day <= d <= last_day:
                gaps.update(self._day_gaps(sensor, d))
        return gaps

    def _neighbour(self, sensor: int, timestamp: int, before: bool) -> TimePoint | None:
        days = self.days(sensor)
        if before:
            for d, _ in reversed(days):
                if d > utc_day(timestamp):
                    continue
                s = self._day_series(sensor, d)
                i = int(np.searchsorted(s.timestamps, timestamp, side="left")) - 1
                if i >= 0:
                    return TimePoint(timestamp=int(s.timestamps[i]), value=float(s.values[i]))
        else:
            for d, _ in days:
                if d < utc_day(timestamp):
                    continue
                s = self._day_series(sensor, d)
                i = int(np.searchsorted(s.timestamps, timestamp, side="right"))
                if i < len(s):
                    return TimePoint(timestamp=int(s.timestamps[i]), value=float(s.values[i]))
        return None

    def query(self, spec: QuerySpec) -> TimeSeries:
        self.require_sensor(spec.sensor)
        raw = self._raw(spec.sensor, spec.start, spec.end)
        if spec.materialize is None:
            return raw
        return self._materialize(spec, raw)

    def _materialize(self, spec: QuerySpec, raw: TimeSeries) -> TimeSeries:
        sensor = spec.sensor
        before = self._neighbour(sensor, spec.start, before=True)
        after = self._neighbour(sensor, spec.end, before=False)
        ts = [raw.timestamps]
        vs = [raw.values]
        if before is not None:
            ts.insert(0, np.array([before.timestamp]))
            vs.insert(0, np.array([before.value]))
        if after is not None:
            ts.append(np.array([after.timestamp]))
            vs.append(np.array([after.value]))
        ext_ts = np.concatenate(ts)
        if ext_ts.size == 0:
            return TimeSeries.empty(sensor)
        first_day = utc_day(int(ext_ts[0]))
        last_day = utc_day(int(ext_ts[-1]))
        gaps = adjacent_gaps(ext_ts, self._gaps_near(sensor, first_day, last_day))
        extended = TimeSeries(sensor=sensor, timestamps=ext_ts, values=np.concatenate(vs), gaps=gaps)

        grid = np.arange(spec.start, spec.end + 1, spec.materialize, dtype=np.int64)
        keep = (grid >= ext_ts[0]) & (grid <= ext_ts[-1])
        for g in gaps:
            keep &= ~((grid > g.start) & (grid < g.end))
        grid = grid[keep]
        if grid.size == 0:
            return TimeSeries.empty(sensor)
        values = reconstruct(extended, grid).values

        out_gaps = []
        for g in gaps:
            i = int(np.searchsorted(grid, g.end, side="left"))
            if 0 < i < grid.size and grid[i - 1] <= g.start:
                out_gaps.append(Gap(start=int(grid[i - 1]), end=int(grid[i])))
        return TimeSeries(sensor=sensor, timestamps=grid, values=values, gaps=tuple(sorted(set(out_gaps), key=lambda g: g.start)))

    def last_point(self, sensor: int) -> TimePoint | None:
        for d, _ in reversed(self.days(sensor)):
            s = self._day_series(sensor, d)
            if len(s):
                return TimePoint(timestamp=int(s.timestamps[-1]), value=float(s.values[-1]))
        return None
