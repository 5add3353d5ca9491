"""
Synthetic PAR generator: determinism, shape and noise band.
"""

from __future__ import annotations

from datetime import date

import numpy as np
import polars as pl
import pytest

from app.core.rdp import simplify
from app.core.synth import clear_sky, generate_par, write_synth_csv
from app.schemas import SynthSpec, day_start


def test_same_seed_same_series():
    spec = SynthSpec(seed=9)
    assert generate_par(spec) == generate_par(spec)
    assert generate_par(spec) != generate_par(SynthSpec(seed=10))


def test_one_sample_per_second_for_each_day():
    series = generate_par(SynthSpec(days=2, start_day=date(2024, 1, 1)))
    assert len(series) == 2 * 86_400
    assert series.timestamps[0] == day_start(date(2024, 1, 1))
    assert np.all(np.diff(series.timestamps) == 1)


def test_night_stays_inside_the_noise_band(par_day):
    night = par_day.values[: 5 * 3600]
    assert night.min() >= 1.0
    assert night.max() <= 6.0


def test_clear_sky_peaks_at_solar_noon():
    spec = SynthSpec()
    seconds = np.arange(86_400, dtype=float)
    sky = clear_sky(seconds, spec)
    assert sky[12 * 3600] == pytest.approx(2000.0)
    assert sky[3 * 3600] == 0.0 and sky[21 * 3600] == 0.0


def test_clouds_only_ever_dim():
    calm = generate_par(SynthSpec(cloud_rate=0, noise_amplitude=0, noise_offset=0))
    cloudy = generate_par(SynthSpec(cloud_rate=6, noise_amplitude=0, noise_offset=0))
    assert np.all(cloudy.values <= calm.values + 1e-9)
    assert np.any(cloudy.values < calm.values - 1.0)


def test_noiseless_clear_day_compresses_almost_entirely():
    clean = generate_par(SynthSpec(cloud_rate=0, noise_amplitude=0, noise_offset=0))
    kept = simplify(clean, 1.0)
    assert len(kept) < 0.01 * len(clean)


def test_csv_layout(tmp_path):
    out = write_synth_csv(SynthSpec(seed=1), tmp_path / "nested" / "par.csv", column="par")
    frame = pl.read_csv(out)
    assert frame.columns == ["timestamp", "par"]
    assert frame["timestamp"][0] == day_start(date(2024, 6, 1))


def test_sunrise_must_precede_sunset():
    with pytest.raises(ValueError):
        SynthSpec(sunrise_hour=18, sunset_hour=6)
