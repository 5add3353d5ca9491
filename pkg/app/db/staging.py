"""
Staging store: the durable buffer live points land in before the mover
compresses them into the segment store.

Every write gets a fresh sequence number from a counter row that is bumped
inside the write's own transaction, so sequence order is commit order. A
move snapshots the highest committed sequence and later deletes only rows at
or below it, so points staged while the move runs are never lost. The move
journal (`move_log`) records each move before the append and is closed after
the delete; a pending entry is replayed with the same snapshot on the next run.
"""

from __future__ import annotations

import logging
from collections.abc import Callable, Iterable
from dataclasses import dataclass
from datetime import datetime, timezone
from pathlib import Path

import numpy as np
from sqlalchemy import delete, func, select, update
from sqlalchemy.dialects.sqlite import insert
from sqlalchemy.orm import Session

from app.db.migrate import run_migrations
from app.db.models import MoveLogRow, StagedPointRow, StagingCounterRow
from app.db.session import create_staging_engine, session_factory
from app.errors import UnregisteredSensorError
from app.schemas import TimePoint

logger = logging.getLogger("sensorvault.staging")

_UPSERT_CHUNK = 5_000
_SEQ = "seq"


@dataclass(frozen=True)
class Snapshot:
    first: int
    last: int
    seq: int
    count: int


@dataclass(frozen=True)
class MoveEntry:
    id: int
    sensor: int
    first: int
    last: int
    snapshot_seq: int
    anchor: TimePoint | None


class StagingStore:
    def __init__(self, path: Path | str, *, is_registered: Callable[[int], bool] | None = None):
        self.path = Path(path)
        self.engine = create_staging_engine(self.path)
        run_migrations(self.engine)
        self._session = session_factory(self.engine)
        self._is_registered = is_registered
        with self._session.begin() as s:
            top = select(func.coalesce(func.max(StagedPointRow.seq), 0)).scalar_subquery()
            s.execute(insert(StagingCounterRow).values(name=_SEQ, value=top).on_conflict_do_nothing())

    def close(self) -> None:
        self.engine.dispose()

    def __enter__(self) -> StagingStore:
        return self

    def __exit__(self, *exc) -> None:
        self.close()

    # -- intake ---------------------------------------------------------------
    @staticmethod
    def _reserve_seqs(s: Session, n: int) -> range:
        # the UPDATE takes the database write lock before any sequence is handed out
        s.execute(
            update(StagingCounterRow)
            .where(StagingCounterRow.name == _SEQ)
            .values(value=StagingCounterRow.value + n)
        )
        top = s.scalar(select(StagingCounterRow.value).where(StagingCounterRow.name == _SEQ))
        return range(top - n + 1, top + 1)

    @staticmethod
    def _write_rows(s: Session, rows: list[dict]) -> None:
        for i in range(0, len(rows), _UPSERT_CHUNK):
            stmt = insert(StagedPointRow).values(rows[i : i + _UPSERT_CHUNK])
            stmt = stmt.on_conflict_do_update(
                index_elements=[StagedPointRow.sensor_id, StagedPointRow.ts],
                set_={"value": stmt.excluded.value, "seq": stmt.excluded.seq},
            )
            s.execute(stmt)

    def stage(self, sensor: int, point: TimePoint) -> None:
        self.stage_many(sensor, [point])

    def stage_many(self, sensor: int, points: Iterable[TimePoint]) -> int:
        """Upsert points; a repeated timestamp keeps the latest value."""
        if self._is_registered is not None and not self._is_registered(sensor):
            raise UnregisteredSensorError(f"sensor {sensor} is not registered")
        pts = list(points)
        if not pts:
            return 0
        with self._session.begin() as s:
            seqs = self._reserve_seqs(s, len(pts))
            rows = [
                {"sensor_id": sensor, "ts": p.timestamp, "value": p.value, "seq": q}
                for p, q in zip(pts, seqs)
            ]
            self._write_rows(s, rows)
        return len(rows)

    # -- inspection -----------------------------------------------------------
    def count(self, sensor: int) -> int:
        with self._session() as s:
            return s.scalar(select(func.count()).where(StagedPointRow.sensor_id == sensor)) or 0

    def sensors(self) -> list[int]:
        with self._session() as s:
            return list(s.scalars(select(StagedPointRow.sensor_id).distinct().order_by(StagedPointRow.sensor_id)))

    def points(self, sensor: int) -> list[TimePoint]:
        ts, vs = self.load(sensor)
        return [TimePoint(timestamp=int(t), value=float(v)) for t, v in zip(ts, vs)]

    # -- mover side -----------------------------------------------------------
    def snapshot(self, sensor: int) -> Snapshot | None:
        with self._session() as s:
            first, last, seq, n = s.execute(
                select(
                    func.min(StagedPointRow.ts),
                    func.max(StagedPointRow.ts),
                    func.max(StagedPointRow.seq),
                    func.count(),
                ).where(StagedPointRow.sensor_id == sensor)
            ).one()
        if not n:
            return None
        return Snapshot(first=first, last=last, seq=seq, count=n)

    def load(
        self, sensor: int, first: int | None = None, last: int | None = None, max_seq: int | None = None
    ) -> tuple[np.ndarray, np.ndarray]:
        """(timestamps, values) sorted by time, optionally bounded by range and sequence."""
        stmt = select(StagedPointRow.ts, StagedPointRow.value).where(StagedPointRow.sensor_id == sensor)
        if first is not None:
            stmt = stmt.where(StagedPointRow.ts >= first)
        if last is not None:
            stmt = stmt.where(StagedPointRow.ts <= last)
        if max_seq is not None:
            stmt = stmt.where(StagedPointRow.seq <= max_seq)
        with self._session() as s:
            rows = s.execute(stmt.order_by(StagedPointRow.ts)).all()
        ts = np.fromiter((r[0] for r in rows), dtype=np.int64, count=len(rows))
        vs = np.fromiter((r[1] for r in rows), dtype=np.float64, count=len(rows))
        return ts, vs

    # -- journal --------------------------------------------------------------
    def pending_move(self, sensor: int) -> MoveEntry | None:
        with self._session() as s:
            row = s.scalars(
                select(MoveLogRow)
                .where(MoveLogRow.sensor_id == sensor, MoveLogRow.status == "pending")
                .order_by(MoveLogRow.id)
                .limit(1)
            ).first()
        if row is None:
            return None
        anchor = None
        if row.anchor_ts is not None:
            anchor = TimePoint(timestamp=row.anchor_ts, value=row.anchor_value)
        return MoveEntry(
            id=row.id,
            sensor=row.sensor_id,
            first=row.first_ts,
            last=row.last_ts,
            snapshot_seq=row.snapshot_seq,
            anchor=anchor,
        )

    def begin_move(self, sensor: int, snap: Snapshot, anchor: TimePoint | None) -> MoveEntry:
        row = MoveLogRow(
            sensor_id=sensor,
            first_ts=snap.first,
            last_ts=snap.last,
            snapshot_seq=snap.seq,
            anchor_ts=anchor.timestamp if anchor else None,
            anchor_value=anchor.value if anchor else None,
            status="pending",
        )
        with self._session.begin() as s:
            s.add(row)
            s.flush()
            move_id = row.id
        return MoveEntry(
            id=move_id, sensor=sensor, first=snap.first, last=snap.last, snapshot_seq=snap.seq, anchor=anchor
        )

    def finish_move(self, entry: MoveEntry, executed_at: datetime | None = None) -> datetime:
        """Delete the moved range and close the journal entry in one transaction."""
        executed_at = executed_at or datetime.now(timezone.utc)
        with self._session.begin() as s:
            deleted = s.execute(
                delete(StagedPointRow).where(
                    StagedPointRow.sensor_id == entry.sensor,
                    StagedPointRow.ts >= entry.first,
                    StagedPointRow.ts <= entry.last,
                    StagedPointRow.seq <= entry.snapshot_seq,
                )
            ).rowcount
            s.execute(
                update(MoveLogRow)
                .where(MoveLogRow.id == entry.id)
                .values(status="done", executed_at=executed_at)
            )
        logger.debug("[finish_move] sensor=%s move=%s deleted %s staged rows", entry.sensor, entry.id, deleted)
        return executed_at

    def moves(self, sensor: int) -> list[MoveLogRow]:
        with self._session() as s:
            return list(s.scalars(select(MoveLogRow).where(MoveLogRow.sensor_id == sensor).order_by(MoveLogRow.id)))
