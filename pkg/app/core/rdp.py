"""
Ramer-Douglas-Peucker simplification over time series.

A point survives when its distance to the chord of the current segment
exceeds epsilon; discarded points are recovered with linear interpolation
between the surviving neighbours (`reconstruct`).

The split tree is built level by level: every open segment of one level is
measured in a single vectorised pass, so 86 400-point days never recurse.
Ties at the maximum distance resolve to the lowest index, which makes the
split tree independent of epsilon.
"""

from __future__ import annotations

import logging
import math
from collections.abc import Sequence

import numpy as np

from app.errors import EmptyInputError, InvalidArgumentError, OrderingError, OutOfRangeError
from app.schemas import DistanceMetric, Perpendicular, TimePoint, TimeSeries, Vertical

logger = logging.getLogger("sensorvault.rdp")

VERTICAL = Vertical()


# ---------------------------------------------------------------------------
# Geometry
# ---------------------------------------------------------------------------
def lerp(t, t_a, v_a, t_b, v_b):
    """Value on the chord (t_a, v_a)-(t_b, v_b) at time ``t``; elementwise on arrays.

    Every caller (simplify, reconstruct, store materialisation) goes through
    this one expression so a discarded point's deviation is computed with
    bit-identical arithmetic on both sides of the round trip.
    """
    return v_a + (v_b - v_a) * ((t - t_a) / (t_b - t_a))


def chord_distances(
    t: np.ndarray,
    v: np.ndarray,
    t_a: float | np.ndarray,
    v_a: float | np.ndarray,
    t_b: float | np.ndarray,
    v_b: float | np.ndarray,
    metric: DistanceMetric = VERTICAL,
) -> np.ndarray:
    """Distance of each (t, v) to the chord a-b. Times are float64 seconds.

    Endpoints are scalars or arrays aligned with ``t`` (one chord per point).
    """
    if isinstance(metric, Vertical):
        return np.abs(v - lerp(t, t_a, v_a, t_b, v_b))

    # Perpendicular: time mapped onto the value axis, origin at a.
    scale = metric.time_scale
    x = (t - t_a) / scale
    dx = (t_b - t_a) / scale
    dy = v_b - v_a
    seg_len2 = np.broadcast_to(dx * dx + dy * dy, np.shape(x))
    proj = x * dx + (v - v_a) * dy
    # a chord collapsed to a point projects everything onto a
    u = np.clip(np.divide(proj, seg_len2, out=np.zeros_like(proj), where=seg_len2 > 0.0), 0.0, 1.0)
    ex = x - u * dx
    ey = v - (v_a + u * dy)
    return np.sqrt(ex * ex + ey * ey)


def point_to_chord_distance(
    p: TimePoint, a: TimePoint, b: TimePoint, metric: DistanceMetric = VERTICAL
) -> float:
    if not (a.timestamp <= p.timestamp <= b.timestamp) or a.timestamp >= b.timestamp:
        raise OrderingError(
            f"need a.t <= p.t <= b.t and a.t < b.t, got a={a.timestamp} p={p.timestamp} b={b.timestamp}"
        )
    d = chord_distances(
        np.array([float(p.timestamp)]),
        np.array([p.value]),
        float(a.timestamp),
        a.value,
        float(b.timestamp),
        b.value,
        metric,
    )
    return float(d[0])


def _check_epsilon(epsilon: float) -> float:
    eps = float(epsilon)
    if not math.isfinite(eps) or eps < 0:
        raise InvalidArgumentError(f"epsilon must be a finite value >= 0, got {epsilon!r}")
    return eps


# ---------------------------------------------------------------------------
# Simplify
# ---------------------------------------------------------------------------
def keep_mask(series: TimeSeries, epsilon: float, metric: DistanceMetric = VERTICAL) -> np.ndarray:
    """Boolean mask of the points RDP keeps; each gap-free run is simplified on its own."""
    if len(series) == 0:
        raise EmptyInputError("cannot simplify an empty series")
    eps = _check_epsilon(epsilon)

    t = series.timestamps.astype(np.float64)
    v = series.values
    keep = np.zeros(len(series), dtype=bool)

    runs = series.runs()
    lo = np.array([r[0] for r in runs], dtype=np.intp)
    hi = np.array([r[1] for r in runs], dtype=np.intp)
    keep[lo] = True
    keep[hi] = True
    _split_levels(t, v, keep, lo, hi, eps, metric)
    return keep


def _split_levels(
    t: np.ndarray,
    v: np.ndarray,
    keep: np.ndarray,
    lo: np.ndarray,
    hi: np.ndarray,
    eps: float,
    metric: DistanceMetric,
) -> None:
    """Breadth-first splitting: all open segments of one tree level are measured in one pass.

    A segment's split depends only on its own endpoints, so the kept set equals
    the one a depth-first recursion produces.
    """
    while lo.size:
        inner = hi - lo - 1
        open_ = inner > 0
        lo, hi, inner = lo[open_], hi[open_], inner[open_]
        if not lo.size:
            break
        starts = np.zeros(lo.size, dtype=np.intp)
        np.cumsum(inner[:-1], out=starts[1:])
        seg = np.repeat(np.arange(lo.size), inner)
        idx = np.arange(int(inner.sum())) - starts[seg] + lo[seg] + 1
        a, b = lo[seg], hi[seg]
        d = chord_distances(t[idx], v[idx], t[a], v[a], t[b], v[b], metric)

        peak = np.maximum.reduceat(d, starts)
        # lowest index at the maximum, as argmax picks it
        at_peak = np.where(d == peak[seg], np.arange(d.size), d.size)
        first = np.minimum.reduceat(at_peak, starts)
        split = peak > eps
        mid = idx[first[split]]
        keep[mid] = True
        lo, hi = np.concatenate([lo[split], mid]), np.concatenate([mid, hi[split]])


def simplify(series: TimeSeries, epsilon: float, metric: DistanceMetric = VERTICAL) -> TimeSeries:
    mask = keep_mask(series, epsilon, metric)
    out = series.select(mask)
    logger.debug(
        "[simplify] sensor=%s eps=%s metric=%s: %d -> %d points",
        series.sensor,
        epsilon,
        metric.kind,
        len(series),
        len(out),
    )
    return out


# ---------------------------------------------------------------------------
# Reconstruct
# ---------------------------------------------------------------------------
def reconstruct(simplified: TimeSeries, at: Sequence[int] | np.ndarray) -> TimeSeries:
    """Values at ``at``: exact on kept timestamps, linear in between, never extrapolated."""
    query = np.asarray(at, dtype=np.int64).reshape(-1)
    if query.size == 0:
        return TimeSeries.empty(simplified.sensor)
    if len(simplified) == 0:
        raise EmptyInputError("cannot reconstruct from an empty series")
    if query.size > 1 and not np.all(np.diff(query) > 0):
        raise OrderingError("requested timestamps must be strictly increasing")

    ts = simplified.timestamps
    first, last = int(ts[0]), int(ts[-1])
    if query[0] < first or query[-1] > last:
        raise OutOfRangeError(
            f"requested span {int(query[0])}..{int(query[-1])} outside stored span {first}..{last}"
        )
    for gap in simplified.gaps:
        lo = np.searchsorted(query, gap.start, side="right")
        if lo < query.size and query[lo] < gap.end:
            raise OutOfRangeError(f"timestamp {int(query[lo])} falls inside gap {gap.start}..{gap.end}")

    n = ts.size
    j = np.searchsorted(ts, query, side="left")
    exact = ts[np.minimum(j, n - 1)] == query
    out = np.empty(query.size, dtype=np.float64)
    out[exact] = simplified.values[j[exact]]

    inner = ~exact
    b = j[inner]
    a = b - 1
    tf = ts.astype(np.float64)
    out[inner] = lerp(query[inner].astype(np.float64), tf[a], simplified.values[a], tf[b], simplified.values[b])
    return TimeSeries(sensor=simplified.sensor, timestamps=query, values=out)
