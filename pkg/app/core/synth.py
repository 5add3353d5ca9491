"""
Seeded synthetic PAR-like irradiance generator (1 Hz, whole UTC days).

    clear sky : peak * sin(pi * (t - sunrise) / day_length) during daylight, 0 at night
    clouds    : Poisson arrivals (rate per hour, over the whole day), each a
                trapezoid-shaped multiplicative dip of random depth
    noise     : offset + U(0, amplitude) on every sample
"""

from __future__ import annotations

import logging
from pathlib import Path

import numpy as np
import polars as pl

from app.schemas import SECONDS_PER_DAY, SynthSpec, TimeSeries, day_start

logger = logging.getLogger("sensorvault.synth")

CLOUD_RAMP_S = (30.0, 240.0)
CLOUD_PLATEAU_S = (60.0, 900.0)
CLOUD_DEPTH = (0.2, 0.8)
VALUE_DECIMALS = 3


def clear_sky(seconds_of_day: np.ndarray, spec: SynthSpec) -> np.ndarray:
    rise, sets = spec.sunrise_hour * 3600.0, spec.sunset_hour * 3600.0
    phase = (seconds_of_day - rise) / (sets - rise)
    daylight = (phase > 0) & (phase < 1)
    return np.where(daylight, spec.clear_sky_peak * np.sin(np.pi * np.clip(phase, 0.0, 1.0)), 0.0)


def cloud_attenuation(rng: np.random.Generator, spec: SynthSpec) -> np.ndarray:
    """Multiplier in (0, 1] for one day; overlapping clouds compound."""
    t = np.arange(SECONDS_PER_DAY, dtype=np.float64)
    factor = np.ones(SECONDS_PER_DAY)
    n = rng.poisson(spec.cloud_rate * 24.0)
    starts = rng.uniform(0, SECONDS_PER_DAY, n)
    ramps = rng.uniform(*CLOUD_RAMP_S, n)
    plateaus = rng.uniform(*CLOUD_PLATEAU_S, n)
    depths = rng.uniform(*CLOUD_DEPTH, n)
    for start, ramp, plateau, depth in zip(starts, ramps, plateaus, depths):
        lo, hi = int(start), min(SECONDS_PER_DAY, int(start + 2 * ramp + plateau) + 1)
        rel = t[lo:hi] - start
        shape = np.clip(np.minimum(rel / ramp, (2 * ramp + plateau - rel) / ramp), 0.0, 1.0)
        factor[lo:hi] *= 1.0 - depth * shape
    return factor


def generate_par(spec: SynthSpec, sensor: int = 0) -> TimeSeries:
    rng = np.random.default_rng(spec.seed)
    seconds = np.arange(SECONDS_PER_DAY, dtype=np.float64)
    sky = clear_sky(seconds, spec)
    days = []
    for _ in range(spec.days):
        signal = sky * cloud_attenuation(rng, spec)
        noise = spec.noise_offset + rng.uniform(0.0, spec.noise_amplitude, SECONDS_PER_DAY)
        days.append(np.round(signal + noise, VALUE_DECIMALS))
    start = day_start(spec.start_day)
    ts = np.arange(start, start + spec.days * SECONDS_PER_DAY, dtype=np.int64)
    logger.info("[generate_par] %d days from %s, seed=%d", spec.days, spec.start_day, spec.seed)
    return TimeSeries(sensor=sensor, timestamps=ts, values=np.concatenate(days))


def write_synth_csv(spec: SynthSpec, out: Path | str, column: str = "1") -> Path:
    """Write the generated history in the batch ingest CSV format."""
    series = generate_par(spec)
    out = Path(out)
    out.parent.mkdir(parents=True, exist_ok=True)
    pl.DataFrame({"timestamp": series.timestamps, column: series.values}).write_csv(out)
    logger.info("[write_synth_csv] wrote %d rows to %s", len(series), out)
    return out
