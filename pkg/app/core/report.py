"""
Compression summaries for stored days: points before vs after compression
and, given the original measurements, the reconstruction error.
"""

from __future__ import annotations

import logging
from datetime import date

import numpy as np
import polars as pl

from app.core.tuner import error_metrics
from app.schemas import SECONDS_PER_DAY, CompressionSummary, QuerySpec, TimeSeries, day_start
from app.store.engine import SegmentStore

logger = logging.getLogger("sensorvault.report")


def grid_points(series: TimeSeries) -> int:
    """1 s grid points covered by the series span, excluding gap interiors."""
    if len(series) == 0:
        return 0
    span = int(series.timestamps[-1] - series.timestamps[0]) + 1
    return span - sum(g.end - g.start - 1 for g in series.gaps)


def _day_query(sensor: int, day: date, materialize: int | None = None) -> QuerySpec:
    start = day_start(day)
    return QuerySpec(sensor=sensor, start=start, end=start + SECONDS_PER_DAY - 1, materialize=materialize)


def aligned_day(
    store: SegmentStore, sensor: int, day: date, source: TimeSeries
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """(timestamps, original, reconstructed) where the store can answer for the source samples."""
    rebuilt = store.query(_day_query(sensor, day, materialize=1))
    original = source.between(day_start(day), day_start(day) + SECONDS_PER_DAY - 1)
    common, i_src, i_rec = np.intersect1d(original.timestamps, rebuilt.timestamps, return_indices=True)
    return common, original.values[i_src], rebuilt.values[i_rec]


def compression_summary(
    store: SegmentStore, sensor: int, day: date, source: TimeSeries | None = None
) -> CompressionSummary:
    stored = store.query(_day_query(sensor, day))
    before, after = grid_points(stored), len(stored)
    reduction = (before - after) / before if before else 0.0
    metrics = None
    if source is not None and after:
        _, original, rebuilt = aligned_day(store, sensor, day, source)
        metrics = error_metrics(original, rebuilt)
    summary = CompressionSummary(
        sensor=sensor,
        day=day,
        points_before=before,
        points_after=after,
        reduction=reduction,
        mae=metrics.mae if metrics else None,
        rmse=metrics.rmse if metrics else None,
        max_error=metrics.max_error if metrics else None,
    )
    logger.info("[compression_summary] sensor=%s day=%s %d -> %d points", sensor, day, before, after)
    return summary


def plot_frame(store: SegmentStore, sensor: int, day: date, source: TimeSeries | None = None) -> pl.DataFrame:
    """Per-second reconstruction of the day, with the original values alongside when known."""
    rebuilt = store.query(_day_query(sensor, day, materialize=1))
    frame = pl.DataFrame(
        {"timestamp": rebuilt.timestamps, "reconstructed": rebuilt.values},
        schema={"timestamp": pl.Int64, "reconstructed": pl.Float64},
    )
    if source is None:
        return frame
    original = pl.DataFrame(
        {"timestamp": source.timestamps, "original": source.values},
        schema={"timestamp": pl.Int64, "original": pl.Float64},
    )
    return frame.join(original, on="timestamp", how="left").select("timestamp", "original", "reconstructed")
