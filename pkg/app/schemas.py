"""
Pydantic schemas for the SensorVault time-series engine.

Covers: time points and series, distance metrics, tuning records,
        mover configuration and reports, store queries, synthetic data specs.
"""

from __future__ import annotations

from collections.abc import Iterable
from datetime import date, datetime, time, timedelta, timezone
from typing import Annotated, Any, Literal, Union
from zoneinfo import ZoneInfo, ZoneInfoNotFoundError

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

SECONDS_PER_DAY = 86_400

# Global sensor identity; 0 marks a series that is not bound to a sensor.
SensorId = Annotated[int, Field(ge=0)]
Epsilon = Annotated[float, Field(ge=0, allow_inf_nan=False)]


def _to_epoch_seconds(value: Any) -> Any:
    if isinstance(value, datetime):
        if value.tzinfo is None:
            value = value.replace(tzinfo=timezone.utc)
        return int(value.timestamp())
    return value


def utc_day(timestamp: int) -> date:
    """Calendar date (UTC) containing an epoch-second timestamp."""
    return date(1970, 1, 1) + timedelta(days=timestamp // SECONDS_PER_DAY)


def day_start(day: date) -> int:
    """Epoch seconds of 00:00:00 UTC on ``day``."""
    return (day - date(1970, 1, 1)).days * SECONDS_PER_DAY


# ---------------------------------------------------------------------------
# Time points and series
# ---------------------------------------------------------------------------
class TimePoint(BaseModel):
    """One measurement: UTC epoch second and a finite value in sensor units."""

    model_config = ConfigDict(frozen=True)

    timestamp: int
    value: float = Field(allow_inf_nan=False)

    @field_validator("timestamp", mode="before")
    @classmethod
    def _coerce_ts(cls, v: Any) -> Any:
        return _to_epoch_seconds(v)


class Gap(BaseModel):
    """Open interval between two stored samples that must never be interpolated."""

    model_config = ConfigDict(frozen=True)

    start: int
    end: int

    @model_validator(mode="after")
    def _ordered(self) -> Gap:
        if self.start >= self.end:
            raise ValueError(f"gap start {self.start} must precede end {self.end}")
        return self

    def contains(self, timestamp: int) -> bool:
        return self.start < timestamp < self.end


def adjacent_gaps(timestamps: np.ndarray, gaps: Iterable[Gap]) -> tuple[Gap, ...]:
    """The gaps whose endpoints are consecutive entries of ``timestamps``, sorted."""
    out = []
    for g in sorted(set(gaps), key=lambda g: g.start):
        i = int(np.searchsorted(timestamps, g.start))
        if i + 1 < timestamps.size and timestamps[i] == g.start and timestamps[i + 1] == g.end:
            out.append(g)
    return tuple(out)


class TimeSeries(BaseModel):
    """Ordered (timestamp, value) columns for one sensor.

    Columns are read-only numpy arrays. ``gaps`` lists intervals between two
    consecutive samples that carry no data; interpolation across them is
    forbidden.
    """

    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    sensor: SensorId = 0
    timestamps: np.ndarray
    values: np.ndarray
    gaps: tuple[Gap, ...] = ()

    @field_validator("timestamps", mode="before")
    @classmethod
    def _ts_array(cls, v: Any) -> np.ndarray:
        arr = np.array(v, dtype=np.int64).reshape(-1)
        arr.flags.writeable = False
        return arr

    @field_validator("values", mode="before")
    @classmethod
    def _value_array(cls, v: Any) -> np.ndarray:
        arr = np.array(v, dtype=np.float64).reshape(-1)
        if not np.all(np.isfinite(arr)):
            raise ValueError("series values must be finite (no NaN or infinity)")
        arr.flags.writeable = False
        return arr

    @model_validator(mode="after")
    def _consistent(self) -> TimeSeries:
        if self.timestamps.shape != self.values.shape:
            raise ValueError("timestamps and values differ in length")
        if self.timestamps.size > 1 and not np.all(np.diff(self.timestamps) > 0):
            raise ValueError("timestamps must be strictly increasing")
        if self.gaps:
            idx_start = np.searchsorted(self.timestamps, [g.start for g in self.gaps])
            for gap, i in zip(self.gaps, idx_start):
                ok = (
                    i + 1 < self.timestamps.size
                    and self.timestamps[i] == gap.start
                    and self.timestamps[i + 1] == gap.end
                )
                if not ok:
                    raise ValueError(f"gap {gap.start}..{gap.end} is not bounded by adjacent samples")
        return self

    # -- construction -----------------------------------------------------
    @classmethod
    def from_points(
        cls, points: Iterable[TimePoint | tuple[int, float]], sensor: int = 0, gaps: Iterable[Gap] = ()
    ) -> TimeSeries:
        ts: list[int] = []
        vs: list[float] = []
        for p in points:
            if isinstance(p, TimePoint):
                ts.append(p.timestamp)
                vs.append(p.value)
            else:
                ts.append(int(p[0]))
                vs.append(float(p[1]))
        return cls(sensor=sensor, timestamps=ts, values=vs, gaps=tuple(gaps))

    @classmethod
    def empty(cls, sensor: int = 0) -> TimeSeries:
        return cls(sensor=sensor, timestamps=[], values=[])

    # -- accessors --------------------------------------------------------
    def __len__(self) -> int:
        return int(self.timestamps.size)

    @property
    def points(self) -> list[TimePoint]:
        return [TimePoint(timestamp=int(t), value=float(v)) for t, v in zip(self.timestamps, self.values)]

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, TimeSeries):
            return NotImplemented
        return (
            self.sensor == other.sensor
            and self.timestamps.tobytes() == other.timestamps.tobytes()
            and self.values.tobytes() == other.values.tobytes()
            and self.gaps == other.gaps
        )

    __hash__ = None  # type: ignore[assignment]

    def runs(self) -> list[tuple[int, int]]:
        """Index ranges [i, j] of gap-free runs."""
        if len(self) == 0:
            return []
        cuts = np.searchsorted(self.timestamps, [g.start for g in self.gaps]).tolist()
        bounds: list[tuple[int, int]] = []
        lo = 0
        for c in sorted(cuts):
            bounds.append((lo, c))
            lo = c + 1
        bounds.append((lo, len(self) - 1))
        return bounds

    def select(self, mask: np.ndarray) -> TimeSeries:
        """Subsequence by boolean mask; gaps survive when both endpoints do."""
        ts = self.timestamps[mask]
        kept = set(ts.tolist())
        gaps = tuple(g for g in self.gaps if g.start in kept and g.end in kept)
        return TimeSeries(sensor=self.sensor, timestamps=ts, values=self.values[mask], gaps=gaps)

    def between(self, start: int, end: int) -> TimeSeries:
        """Samples with start <= timestamp <= end."""
        lo = int(np.searchsorted(self.timestamps, start, side="left"))
        hi = int(np.searchsorted(self.timestamps, end, side="right"))
        mask = np.zeros(len(self), dtype=bool)
        mask[lo:hi] = True
        return self.select(mask)


# ---------------------------------------------------------------------------
# Distance metrics
# ---------------------------------------------------------------------------
class Vertical(BaseModel):
    """Deviation measured along the value axis only (sensor units)."""

    model_config = ConfigDict(frozen=True)

    kind: Literal["vertical"] = "vertical"


class Perpendicular(BaseModel):
    """True point-to-segment distance after mapping time onto the value axis."""

    model_config = ConfigDict(frozen=True)

    kind: Literal["perpendicular"] = "perpendicular"
    time_scale: float = Field(..., gt=0, allow_inf_nan=False, description="seconds per value unit")


DistanceMetric = Annotated[Union[Vertical, Perpendicular], Field(discriminator="kind")]


# ---------------------------------------------------------------------------
# Tuning
# ---------------------------------------------------------------------------
class FluctuationWindow(BaseModel):
    model_config = ConfigDict(frozen=True)

    duration: timedelta = timedelta(hours=2)

    @field_validator("duration")
    @classmethod
    def _divides_day(cls, v: timedelta) -> timedelta:
        seconds = v.total_seconds()
        if seconds <= 0 or seconds != int(seconds) or SECONDS_PER_DAY % int(seconds):
            raise ValueError("window duration must be positive and divide 24 h evenly")
        return v

    @property
    def seconds(self) -> int:
        return int(self.duration.total_seconds())


class SteadyStateSpec(BaseModel):
    """Daily clock interval in which the sensor should read ``expected_value``."""

    model_config = ConfigDict(frozen=True)

    start: time = time(0, 0)
    end: time = time(3, 0)
    expected_value: float = 0.0
    timezone: str = "UTC"

    @field_validator("timezone")
    @classmethod
    def _known_zone(cls, v: str) -> str:
        try:
            ZoneInfo(v)
        except (ZoneInfoNotFoundError, ValueError) as exc:
            raise ValueError(f"unknown time zone {v!r}") from exc
        return v

    @model_validator(mode="after")
    def _non_empty(self) -> SteadyStateSpec:
        if self.start == self.end:
            raise ValueError("steady-state window is empty (start == end)")
        return self


class EpsilonReport(BaseModel):
    """Point reduction and reconstruction error for one candidate epsilon."""

    epsilon: Epsilon
    total_points: int = Field(..., ge=0)
    kept_points: int = Field(..., ge=0)
    reduction: float = Field(..., ge=0, le=1)
    mae: float = Field(..., ge=0)
    rmse: float = Field(..., ge=0)
    max_error: float = Field(..., ge=0)

    @model_validator(mode="after")
    def _error_order(self) -> EpsilonReport:
        slack = 1e-12 * max(1.0, self.max_error)
        if self.rmse + slack < self.mae:
            raise ValueError("rmse must be >= mae")
        if self.max_error + slack < self.mae:
            raise ValueError("max_error must be >= mae")
        return self


class ErrorMetrics(BaseModel):
    mae: float
    rmse: float
    max_error: float


# ---------------------------------------------------------------------------
# Ingestion
# ---------------------------------------------------------------------------
class MoverConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    period: timedelta = timedelta(minutes=5)
    max_gap: timedelta = timedelta(minutes=10)
    default_epsilon: Epsilon = 5.0
    epsilons: dict[int, Epsilon] = Field(default_factory=dict)
    category_epsilons: dict[str, Epsilon] = Field(default_factory=dict)
    metric: DistanceMetric = Field(default_factory=Vertical)

    @field_validator("period")
    @classmethod
    def _positive_period(cls, v: timedelta) -> timedelta:
        if v.total_seconds() <= 0:
            raise ValueError("period must be > 0")
        return v

    @field_validator("max_gap")
    @classmethod
    def _min_gap(cls, v: timedelta) -> timedelta:
        if v.total_seconds() < 1:
            raise ValueError("max_gap must be >= 1 s")
        return v

    @property
    def max_gap_seconds(self) -> int:
        return int(self.max_gap.total_seconds())

    def epsilon_for(self, sensor: int, category: str | None = None) -> float:
        if sensor in self.epsilons:
            return self.epsilons[sensor]
        if category is not None and category in self.category_epsilons:
            return self.category_epsilons[category]
        return self.default_epsilon


class MoveReport(BaseModel):
    """Outcome of moving one sensor's staged range (or one file column) into the store."""

    sensor: SensorId
    first: int | None = None
    last: int | None = None
    staged_count: int = 0
    resampled_count: int = 0
    kept_count: int = 0
    appended_count: int = 0
    late_count: int = 0
    sealed_count: int = 0
    epsilon: float = 0.0
    gaps: list[Gap] = Field(default_factory=list)
    replayed: bool = False
    executed_at: datetime = Field(default_factory=lambda: datetime.now(timezone.utc))

    @model_validator(mode="after")
    def _counts(self) -> MoveReport:
        if self.kept_count > self.resampled_count:
            raise ValueError("kept_count cannot exceed resampled_count")
        return self

    @property
    def is_empty(self) -> bool:
        return self.first is None


class RowError(BaseModel):
    line: int
    column: str
    message: str


class IngestFileResult(BaseModel):
    path: str
    total_rows: int
    valid_rows: int
    reports: list[MoveReport] = Field(default_factory=list)
    row_errors: list[RowError] = Field(default_factory=list)


# ---------------------------------------------------------------------------
# Store
# ---------------------------------------------------------------------------
class QuerySpec(BaseModel):
    sensor: SensorId
    start: int
    end: int
    materialize: int | None = Field(default=None, ge=1, description="uniform grid resolution, seconds")

    @field_validator("start", "end", mode="before")
    @classmethod
    def _coerce_bounds(cls, v: Any) -> Any:
        return _to_epoch_seconds(v)

    @model_validator(mode="after")
    def _ordered(self) -> QuerySpec:
        if self.start > self.end:
            raise ValueError("query start must be <= end")
        return self


class CompressionSummary(BaseModel):
    """One row of the `report` command."""

    sensor: SensorId
    day: date
    points_before: int
    points_after: int
    reduction: float
    mae: float | None = None
    rmse: float | None = None
    max_error: float | None = None


# ---------------------------------------------------------------------------
# Synthetic data
# ---------------------------------------------------------------------------
class SynthSpec(BaseModel):
    """Seeded PAR-like irradiance generator parameters."""

    days: int = Field(1, ge=1)
    start_day: date = date(2024, 6, 1)
    clear_sky_peak: float = Field(2000.0, ge=0)
    cloud_rate: float = Field(6.0, ge=0, description="cloud transients per hour")
    noise_amplitude: float = Field(5.0, ge=0, description="width of the uniform noise band")
    noise_offset: float = Field(1.0, ge=0, description="lower edge of the noise band")
    sunrise_hour: float = Field(6.0, ge=0, le=24)
    sunset_hour: float = Field(18.0, ge=0, le=24)
    seed: int = Field(0, ge=0)

    @model_validator(mode="after")
    def _daylight(self) -> SynthSpec:
        if self.sunrise_hour >= self.sunset_hour:
            raise ValueError("sunrise must precede sunset")
        return self
