"""
Sealed day segments: one sensor, one UTC day, columnar and checksummed.

Layout (little-endian, format version 1):

    header   magic "SVLT" | u16 version | u64 sensor | i64 day start | u32 count | u32 gap count
    offsets  u32 x count   seconds within the day, strictly increasing
    values   f64 x count
    gaps     (i64 start, i64 end) x gap count
    trailer  u32 CRC-32 of every preceding byte
"""

from __future__ import annotations

import logging
import os
import struct
import zlib
from collections.abc import Iterable
from datetime import date
from pathlib import Path
from typing import Any

import numpy as np
from pydantic import BaseModel, ConfigDict, field_validator, model_validator

from app.errors import CorruptionError
from app.schemas import SECONDS_PER_DAY, Gap, SensorId, TimeSeries, adjacent_gaps, day_start, utc_day

logger = logging.getLogger("sensorvault.segment")

MAGIC = b"SVLT"
FORMAT_VERSION = 1
_HEADER = struct.Struct("<4sHQqII")
_GAP = np.dtype([("start", "<i8"), ("end", "<i8")])
_CRC = struct.Struct("<I")


class Segment(BaseModel):
    """Immutable columnar day bucket of one sensor's kept points."""

    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    sensor: SensorId
    day: date
    offsets: np.ndarray
    values: np.ndarray
    gaps: tuple[Gap, ...] = ()
    sealed: bool = True
    checksum: int = 0

    @field_validator("offsets", mode="before")
    @classmethod
    def _offsets(cls, v: Any) -> np.ndarray:
        arr = np.array(v, dtype="<u4").reshape(-1)
        arr.flags.writeable = False
        return arr

    @field_validator("values", mode="before")
    @classmethod
    def _values(cls, v: Any) -> np.ndarray:
        arr = np.array(v, dtype="<f8").reshape(-1)
        arr.flags.writeable = False
        return arr

    @model_validator(mode="after")
    def _columns(self) -> Segment:
        if self.offsets.shape != self.values.shape:
            raise ValueError("offsets and values differ in length")
        if self.offsets.size and int(self.offsets[-1]) >= SECONDS_PER_DAY:
            raise ValueError("offset beyond the end of the day")
        if self.offsets.size > 1 and not np.all(np.diff(self.offsets.astype(np.int64)) > 0):
            raise ValueError("offsets must be strictly increasing")
        return self

    @property
    def count(self) -> int:
        return int(self.offsets.size)

    def to_series(self) -> TimeSeries:
        ts = self.offsets.astype(np.int64) + day_start(self.day)
        # a gap ending here may open on the previous day
        return TimeSeries(sensor=self.sensor, timestamps=ts, values=self.values, gaps=adjacent_gaps(ts, self.gaps))

    @classmethod
    def from_series(cls, series: TimeSeries, day: date, gaps: Iterable[Gap] | None = None) -> Segment:
        base = day_start(day)
        if len(series) and (utc_day(int(series.timestamps[0])) != day or utc_day(int(series.timestamps[-1])) != day):
            raise ValueError(f"series does not lie within {day}")
        return cls(
            sensor=series.sensor,
            day=day,
            offsets=series.timestamps - base,
            values=series.values,
            gaps=tuple(sorted(set(series.gaps if gaps is None else gaps), key=lambda g: g.start)),
        )


# ---------------------------------------------------------------------------
# Codec
# ---------------------------------------------------------------------------
def encode_segment(segment: Segment) -> bytes:
    gaps = np.array([(g.start, g.end) for g in segment.gaps], dtype=_GAP)
    body = b"".join(
        [
            _HEADER.pack(
                MAGIC,
                FORMAT_VERSION,
                segment.sensor,
                day_start(segment.day),
                segment.count,
                len(segment.gaps),
            ),
            segment.offsets.astype("<u4").tobytes(),
            segment.values.astype("<f8").tobytes(),
            gaps.tobytes(),
        ]
    )
    return body + _CRC.pack(zlib.crc32(body))


def decode_segment(data: bytes, source: str = "<bytes>") -> Segment:
    if len(data) < _HEADER.size + _CRC.size:
        raise CorruptionError(f"{source}: truncated segment ({len(data)} bytes)")
    body, (stored_crc,) = data[: -_CRC.size], _CRC.unpack(data[-_CRC.size :])
    actual = zlib.crc32(body)
    if actual != stored_crc:
        raise CorruptionError(f"{source}: checksum mismatch (stored {stored_crc:#010x}, computed {actual:#010x})")

    magic, version, sensor, start, count, gap_count = _HEADER.unpack_from(body, 0)
    if magic != MAGIC:
        raise CorruptionError(f"{source}: bad magic {magic!r}")
    if version != FORMAT_VERSION:
        raise CorruptionError(f"{source}: unsupported segment format version {version}")
    expected = _HEADER.size + count * 4 + count * 8 + gap_count * _GAP.itemsize
    if len(body) != expected:
        raise CorruptionError(f"{source}: length {len(body)} does not match header ({expected})")

    pos = _HEADER.size
    offsets = np.frombuffer(body, dtype="<u4", count=count, offset=pos)
    pos += count * 4
    values = np.frombuffer(body, dtype="<f8", count=count, offset=pos)
    pos += count * 8
    gaps = np.frombuffer(body, dtype=_GAP, count=gap_count, offset=pos)
    try:
        return Segment(
            sensor=sensor,
            day=utc_day(start),
            offsets=offsets,
            values=values,
            gaps=tuple(Gap(start=int(g["start"]), end=int(g["end"])) for g in gaps),
            checksum=stored_crc,
        )
    except ValueError as exc:
        raise CorruptionError(f"{source}: {exc}") from exc


def write_segment(path: Path, segment: Segment) -> Segment:
    """Persist atomically (temp file, fsync, rename); returns the segment with its checksum."""
    data = encode_segment(segment)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(".seg.tmp")
    with open(tmp, "wb") as fh:
        fh.write(data)
        fh.flush()
        os.fsync(fh.fileno())
    os.replace(tmp, path)
    logger.info("[write_segment] sealed %s (%d points, %d bytes)", path, segment.count, len(data))
    return segment.model_copy(update={"checksum": _CRC.unpack(data[-_CRC.size :])[0]})


def read_segment(path: Path) -> Segment:
    return decode_segment(path.read_bytes(), str(path))
