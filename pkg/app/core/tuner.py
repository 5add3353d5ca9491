"""
Epsilon decision procedure.

1. find the day with the highest average fluctuation (std-dev per window),
2. estimate the sensor noise floor from steady-state samples,
3. sweep candidate epsilons over that day (reduction + error metrics),
4. pick the smallest candidate above the noise floor past which savings flatten.
"""

from __future__ import annotations

import logging
from collections.abc import Sequence
from datetime import date, datetime, timezone

import numpy as np
import polars as pl

from app.core.rdp import VERTICAL, reconstruct, simplify
from app.errors import InsufficientDataError, InvalidArgumentError
from app.schemas import (
    DistanceMetric,
    EpsilonReport,
    ErrorMetrics,
    FluctuationWindow,
    SteadyStateSpec,
    TimeSeries,
)

logger = logging.getLogger("sensorvault.tuner")

DEFAULT_KNEE_THRESHOLD = 0.01
MIN_WINDOW_COVERAGE = 0.5
NOISE_PERCENTILES = (1.0, 99.0)


def _frame(history: TimeSeries) -> pl.DataFrame:
    return pl.DataFrame(
        {"ts": history.timestamps, "value": history.values},
        schema={"ts": pl.Int64, "value": pl.Float64},
    ).with_columns(pl.from_epoch("ts", time_unit="s").dt.replace_time_zone("UTC").alias("at"))


def _sampling_interval(history: TimeSeries) -> float:
    if len(history) < 2:
        return 1.0
    return float(np.median(np.diff(history.timestamps)))


# ---------------------------------------------------------------------------
# High-fluctuation day
# ---------------------------------------------------------------------------
def daily_fluctuation(history: TimeSeries, window: FluctuationWindow = FluctuationWindow()) -> pl.DataFrame:
    """Per-day average of per-window population std-devs, eligible days only.

    Windows are calendar aligned (UTC). A window counts when it holds at least
    half the samples its length implies; a day counts when at least half of
    its windows do.
    """
    if len(history) == 0:
        raise InsufficientDataError("history is empty")
    step = _sampling_interval(history)
    expected = window.seconds / step
    windows_per_day = 86_400 // window.seconds

    per_window = (
        _frame(history)
        .with_columns(
            pl.col("at").dt.date().alias("day"),
            (pl.col("ts") // window.seconds).alias("window"),
        )
        .group_by("day", "window")
        .agg(pl.col("value").std(ddof=0).alias("std"), pl.len().alias("n"))
        .filter(pl.col("n") >= MIN_WINDOW_COVERAGE * expected)
    )
    return (
        per_window.group_by("day")
        .agg(pl.col("std").mean().alias("mean_std"), pl.len().alias("windows"))
        .filter(pl.col("windows") >= MIN_WINDOW_COVERAGE * windows_per_day)
        .sort("day")
    )


def find_high_fluctuation_day(history: TimeSeries, window: FluctuationWindow = FluctuationWindow()) -> date:
    if len(history) < 2 or history.timestamps[-1] - history.timestamps[0] + _sampling_interval(history) < 86_400:
        raise InsufficientDataError("history must span at least one full day")
    days = daily_fluctuation(history, window)
    if days.height == 0:
        raise InsufficientDataError("history holds no sufficiently covered day")
    # sorted by day, so the first maximum is the earliest date
    best = days.row(int(np.argmax(days["mean_std"].to_numpy())), named=True)
    logger.info(
        "[find_high_fluctuation_day] sensor=%s: %d eligible days, picked %s (mean std %.4f)",
        history.sensor,
        days.height,
        best["day"],
        best["mean_std"],
    )
    return best["day"]


def day_slice(history: TimeSeries, day: date) -> TimeSeries:
    start = int(datetime(day.year, day.month, day.day, tzinfo=timezone.utc).timestamp())
    return history.between(start, start + 86_399)


# ---------------------------------------------------------------------------
# Noise floor
# ---------------------------------------------------------------------------
def steady_state_values(history: TimeSeries, spec: SteadyStateSpec) -> np.ndarray:
    frame = _frame(history).with_columns(pl.col("at").dt.convert_time_zone(spec.timezone).dt.time().alias("clock"))
    if spec.start < spec.end:
        cond = (pl.col("clock") >= spec.start) & (pl.col("clock") < spec.end)
    else:  # window wraps midnight
        cond = (pl.col("clock") >= spec.start) | (pl.col("clock") < spec.end)
    return frame.filter(cond)["value"].to_numpy()


def estimate_noise_floor(history: TimeSeries, spec: SteadyStateSpec = SteadyStateSpec()) -> float:
    """Spread (p99 - p1) of readings inside the steady-state window."""
    values = steady_state_values(history, spec)
    if values.size == 0:
        raise InsufficientDataError(
            f"no samples inside the steady-state window {spec.start}-{spec.end} ({spec.timezone})"
        )
    lo, hi = np.percentile(values, NOISE_PERCENTILES)
    floor = float(hi - lo)
    logger.info(
        "[estimate_noise_floor] sensor=%s: %d steady-state samples, floor=%.4f, median offset from expected=%.4f",
        history.sensor,
        values.size,
        floor,
        float(np.median(values)) - spec.expected_value,
    )
    return floor


# ---------------------------------------------------------------------------
# Sweep
# ---------------------------------------------------------------------------
def error_metrics(original: np.ndarray, reconstructed: np.ndarray) -> ErrorMetrics:
    """MAE, RMSE and max absolute error between aligned value arrays."""
    err = np.abs(np.asarray(original, dtype=np.float64) - np.asarray(reconstructed, dtype=np.float64))
    if err.size == 0:
        return ErrorMetrics(mae=0.0, rmse=0.0, max_error=0.0)
    return ErrorMetrics(
        mae=float(err.mean()),
        rmse=float(np.sqrt(np.mean(err * err))),
        max_error=float(err.max()),
    )


def evaluate_epsilon(day: TimeSeries, epsilon: float, metric: DistanceMetric = VERTICAL) -> EpsilonReport:
    kept = simplify(day, epsilon, metric)
    rebuilt = reconstruct(kept, day.timestamps)
    metrics = error_metrics(day.values, rebuilt.values)
    n = len(day)
    return EpsilonReport(
        epsilon=epsilon,
        total_points=n,
        kept_points=len(kept),
        reduction=(n - len(kept)) / n,
        mae=metrics.mae,
        rmse=metrics.rmse,
        max_error=metrics.max_error,
    )


def sweep_epsilon(
    day: TimeSeries, candidates: Sequence[float], metric: DistanceMetric = VERTICAL
) -> list[EpsilonReport]:
    if not candidates:
        raise InvalidArgumentError("candidate epsilon list is empty")
    if any(b <= a for a, b in zip(candidates, candidates[1:])):
        raise InvalidArgumentError(f"candidates must be strictly increasing, got {list(candidates)}")
    if len(day) == 0:
        raise InsufficientDataError("sweep day is empty")
    steps = np.diff(day.timestamps)
    gap_starts = np.searchsorted(day.timestamps, [g.start for g in day.gaps])
    steps[gap_starts.astype(np.intp)] = 1
    if not np.all(steps == 1):
        raise InvalidArgumentError("sweep day must be resampled to a uniform 1 s grid")

    reports = [evaluate_epsilon(day, float(eps), metric) for eps in candidates]
    for r in reports:
        logger.info(
            "[sweep_epsilon] eps=%s kept=%d/%d reduction=%.4f mae=%.4f rmse=%.4f max=%.4f",
            r.epsilon,
            r.kept_points,
            r.total_points,
            r.reduction,
            r.mae,
            r.rmse,
            r.max_error,
        )
    return reports


# ---------------------------------------------------------------------------
# Selection
# ---------------------------------------------------------------------------
def explain_selection(
    reports: Sequence[EpsilonReport],
    noise_floor: float,
    knee_threshold: float = DEFAULT_KNEE_THRESHOLD,
) -> tuple[float, str, bool]:
    """Selected epsilon, a one-line rationale, and whether the fallback fired."""
    if not reports:
        raise InvalidArgumentError("no epsilon reports to select from")
    ordered = list(reports)
    above = [i for i, r in enumerate(ordered) if r.epsilon >= noise_floor]
    if not above:
        chosen = ordered[-1]
        return (
            chosen.epsilon,
            f"noise floor {noise_floor:.4g} exceeds every candidate; using the largest ({chosen.epsilon:g})",
            True,
        )
    for i in above:
        if i + 1 == len(ordered):
            continue
        gain = ordered[i + 1].reduction - ordered[i].reduction
        if gain < knee_threshold:
            return (
                ordered[i].epsilon,
                f"eps={ordered[i].epsilon:g} >= noise floor {noise_floor:.4g}; moving to "
                f"eps={ordered[i + 1].epsilon:g} saves only {gain:.4f} more (< {knee_threshold:g})",
                False,
            )
    chosen = ordered[above[0]]
    return (
        chosen.epsilon,
        f"no savings knee found; smallest candidate above noise floor {noise_floor:.4g} is {chosen.epsilon:g}",
        False,
    )


def select_epsilon(
    reports: Sequence[EpsilonReport],
    noise_floor: float,
    knee_threshold: float = DEFAULT_KNEE_THRESHOLD,
) -> float:
    epsilon, rationale, fell_back = explain_selection(reports, noise_floor, knee_threshold)
    if fell_back:
        logger.warning("[select_epsilon] %s", rationale)
    else:
        logger.info("[select_epsilon] %s", rationale)
    return epsilon
