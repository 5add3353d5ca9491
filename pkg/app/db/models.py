"""
SQLAlchemy models for the staging database (a local SQLite file).

Tables:
  - staged_points : raw live points waiting for the mover, one row per (sensor, timestamp)
  - move_log      : one journal row per mover run (snapshot range, anchor, status)
  - staging_counters : named counters; ``seq`` hands out write sequence numbers
"""

from __future__ import annotations

from datetime import datetime, timezone

from sqlalchemy import BigInteger, Column, DateTime, Float, Index, Integer, String
from sqlalchemy.orm import DeclarativeBase


class Base(DeclarativeBase):
    pass


class StagedPointRow(Base):
    __tablename__ = "staged_points"

    sensor_id = Column(Integer, primary_key=True)
    ts = Column(BigInteger, primary_key=True)
    value = Column(Float, nullable=False)
    seq = Column(BigInteger, nullable=False)  # bumped on every write; a move only deletes rows <= its snapshot


class MoveLogRow(Base):
    __tablename__ = "move_log"
    __table_args__ = (Index("ix_move_log_sensor_status", "sensor_id", "status"),)

    id = Column(Integer, primary_key=True, autoincrement=True)
    sensor_id = Column(Integer, nullable=False)
    first_ts = Column(BigInteger, nullable=False)
    last_ts = Column(BigInteger, nullable=False)
    snapshot_seq = Column(BigInteger, nullable=False)
    anchor_ts = Column(BigInteger, nullable=True)
    anchor_value = Column(Float, nullable=True)
    status = Column(String(16), nullable=False, default="pending")  # 'pending' | 'done'
    created_at = Column(DateTime(timezone=True), default=lambda: datetime.now(timezone.utc))
    executed_at = Column(DateTime(timezone=True), nullable=True)


class StagingCounterRow(Base):
    __tablename__ = "staging_counters"

    name = Column(String(32), primary_key=True)
    value = Column(BigInteger, nullable=False)
