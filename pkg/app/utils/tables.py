"""
CSV encoding for everything the CLI prints: series, sweep tables, reports.

All output is RFC-4180 CSV with a header row, produced through polars so the
library and the CLI share one encoder. Nested values (gap lists) are flattened
to ``start-end`` tokens joined by ``;``.
"""

from __future__ import annotations

from collections.abc import Sequence
from datetime import date, datetime
from typing import Any

import polars as pl
from pydantic import BaseModel

from app.schemas import Gap, TimeSeries

GAP_SEP = ";"


def _flatten(value: Any) -> Any:
    if isinstance(value, Gap):
        return f"{value.start}-{value.end}"
    if isinstance(value, list):
        return GAP_SEP.join(str(_flatten(v)) for v in value)
    if isinstance(value, datetime):
        return value.isoformat()
    if isinstance(value, date):
        return value.isoformat()
    if isinstance(value, BaseModel):
        return value.model_dump_json()
    return value


def models_frame(rows: Sequence[BaseModel], columns: Sequence[str] | None = None) -> pl.DataFrame:
    """One row per model; ``columns`` picks and orders fields."""
    if not rows and columns is None:
        return pl.DataFrame()
    names = list(columns) if columns is not None else list(type(rows[0]).model_fields)
    data = {name: [_flatten(getattr(r, name)) for r in rows] for name in names}
    if not rows:
        return pl.DataFrame({name: [] for name in names}, schema={name: pl.String for name in names})
    return pl.DataFrame(data)


def series_frame(series: TimeSeries) -> pl.DataFrame:
    return pl.DataFrame(
        {"timestamp": series.timestamps, "value": series.values},
        schema={"timestamp": pl.Int64, "value": pl.Float64},
    )


def to_csv(frame: pl.DataFrame) -> str:
    return frame.write_csv()


def series_csv(series: TimeSeries) -> str:
    return to_csv(series_frame(series))


def models_csv(rows: Sequence[BaseModel], columns: Sequence[str] | None = None) -> str:
    return to_csv(models_frame(rows, columns))
