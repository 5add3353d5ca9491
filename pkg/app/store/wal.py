"""
Per-sensor write-ahead log holding the open (unsealed) day buckets.

Each record is a frame: u32 payload length | u32 CRC-32 | JSON payload.
Writes always go to the end of the file and are fsynced before the append
call returns. On open the file is scanned once; a torn frame at the tail (a
crash mid-write) is truncated away, while a bad frame followed by more data
means real corruption and raises.
"""

from __future__ import annotations

import json
import logging
import os
import struct
import threading
import zlib
from pathlib import Path
from typing import Annotated, Literal, Union

from pydantic import BaseModel, Field, TypeAdapter, ValidationError

from app.errors import CorruptionError
from app.schemas import Gap

logger = logging.getLogger("sensorvault.wal")

_FRAME = struct.Struct("<II")


class PointsRecord(BaseModel):
    kind: Literal["points"] = "points"
    timestamps: list[int]
    values: list[float]


class GapRecord(BaseModel):
    kind: Literal["gap"] = "gap"
    gap: Gap


WalRecord = Annotated[Union[PointsRecord, GapRecord], Field(discriminator="kind")]
_RECORD = TypeAdapter(WalRecord)


def _frame(record: PointsRecord | GapRecord) -> bytes:
    # stdlib json: float repr round-trips bit-exactly
    payload = json.dumps(record.model_dump(mode="json"), separators=(",", ":")).encode("utf-8")
    return _FRAME.pack(len(payload), zlib.crc32(payload)) + payload


class WriteAheadLog:
    """Append-only record log for one sensor directory."""

    def __init__(self, path: Path):
        self.path = path
        self._lock = threading.Lock()
        self.path.parent.mkdir(parents=True, exist_ok=True)
        if not self.path.exists():
            self.path.touch()
            logger.info("[wal] created %s", self.path)
        self.records: list[PointsRecord | GapRecord] = self._recover()
        self._fh = open(self.path, "ab")

    def _recover(self) -> list[PointsRecord | GapRecord]:
        data = self.path.read_bytes()
        records: list[PointsRecord | GapRecord] = []
        pos = 0
        while pos < len(data):
            good_end = pos
            if pos + _FRAME.size > len(data):
                self._truncate(good_end, "torn frame header")
                break
            length, crc = _FRAME.unpack_from(data, pos)
            start, end = pos + _FRAME.size, pos + _FRAME.size + length
            if end > len(data):
                self._truncate(good_end, "torn frame payload")
                break
            payload = data[start:end]
            if zlib.crc32(payload) != crc:
                if end == len(data):
                    self._truncate(good_end, "checksum mismatch in last frame")
                    break
                raise CorruptionError(f"{self.path}: checksum mismatch in frame at byte {pos}")
            try:
                records.append(_RECORD.validate_python(json.loads(payload)))
            except (ValueError, ValidationError) as exc:
                raise CorruptionError(f"{self.path}: undecodable frame at byte {pos}: {exc}") from exc
            pos = end
        if records:
            logger.info("[wal] recovered %d records from %s", len(records), self.path)
        return records

    def _truncate(self, size: int, reason: str) -> None:
        logger.warning("[wal] %s in %s; truncating to %d bytes", reason, self.path, size)
        with open(self.path, "r+b") as fh:
            fh.truncate(size)
            fh.flush()
            os.fsync(fh.fileno())

    def append(self, records: list[PointsRecord | GapRecord]) -> None:
        if not records:
            return
        blob = b"".join(_frame(r) for r in records)
        with self._lock:
            self._fh.write(blob)
            self._fh.flush()
            os.fsync(self._fh.fileno())
            self.records.extend(records)

    def rewrite(self, records: list[PointsRecord | GapRecord]) -> None:
        """Atomically replace the log contents (used when a day leaves the open set)."""
        tmp = self.path.with_suffix(".log.tmp")
        with self._lock:
            with open(tmp, "wb") as fh:
                fh.write(b"".join(_frame(r) for r in records))
                fh.flush()
                os.fsync(fh.fileno())
            self._fh.close()
            os.replace(tmp, self.path)
            self._fh = open(self.path, "ab")
            self.records = list(records)

    def close(self) -> None:
        with self._lock:
            if not self._fh.closed:
                self._fh.close()
