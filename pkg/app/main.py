"""
Entry point: `python -m app <command>` or the `sensorvault` script.

Commands: ingest, daemon, tune-epsilon, query, report, gen-synth.
Tabular results go to standard output as CSV; diagnostics go to standard error.
"""

from __future__ import annotations

import argparse
import asyncio
import logging
import sys
from collections.abc import Sequence
from datetime import date, timedelta
from pathlib import Path

import polars as pl
from pydantic import ValidationError

from app.catalog.service import Catalog
from app.config import Settings, load_daemon_config
from app.core import report as report_mod
from app.core.daemon import run_daemon
from app.core.ingest import ingest_file, parse_timestamp, read_measurement_csv, resample_arrays
from app.core.rdp import reconstruct, simplify
from app.core.synth import write_synth_csv
from app.core.tuner import (
    day_slice,
    estimate_noise_floor,
    explain_selection,
    find_high_fluctuation_day,
    sweep_epsilon,
)
from app.db.staging import StagingStore
from app.errors import ConfigError, InsufficientDataError, SensorVaultError
from app.schemas import (
    SECONDS_PER_DAY,
    FluctuationWindow,
    MoverConfig,
    QuerySpec,
    SteadyStateSpec,
    SynthSpec,
    TimeSeries,
    day_start,
)
from app.store.engine import SegmentStore
from app.utils.tables import models_csv, series_csv, to_csv

logger = logging.getLogger("sensorvault.cli")

SWEEP_COLUMNS = ("epsilon", "kept_points", "reduction", "mae", "rmse", "max_error")
REPORT_COLUMNS = (
    "sensor",
    "first",
    "last",
    "staged_count",
    "resampled_count",
    "kept_count",
    "appended_count",
    "late_count",
    "sealed_count",
    "epsilon",
    "gaps",
)


class _Context:
    """Resolved paths and lazily opened handles for one invocation."""

    def __init__(self, args: argparse.Namespace, settings: Settings):
        self.store_root = Path(args.store) if args.store else settings.store_root
        self.catalog_path = Path(args.catalog) if args.catalog else settings.catalog_path
        self.config_path = Path(args.config) if args.config else settings.config_path
        self.staging_path = self.store_root / "staging.db" if args.store else settings.staging_path

    def catalog(self) -> Catalog | None:
        """The catalog, when one exists; without it sensors are not checked for registration."""
        return Catalog(self.catalog_path) if self.catalog_path.exists() else None

    def store(self, catalog: Catalog | None) -> SegmentStore:
        return SegmentStore(self.store_root, is_registered=catalog.is_registered if catalog else None)


# ---------------------------------------------------------------------------
# Argument helpers
# ---------------------------------------------------------------------------
def _pair(text: str) -> tuple[str, str]:
    key, sep, value = text.partition("=")
    if not sep or not key or not value:
        raise argparse.ArgumentTypeError(f"expected KEY=VALUE, got {text!r}")
    return key, value


def _epsilon_pair(text: str) -> tuple[int, float]:
    key, value = _pair(text)
    try:
        return int(key), float(value)
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected SENSOR=EPSILON, got {text!r}") from exc


def _map_pair(text: str) -> tuple[str, int]:
    key, value = _pair(text)
    try:
        return key, int(value)
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected COLUMN=SENSOR, got {text!r}") from exc


def _timestamp(text: str) -> int:
    try:
        return parse_timestamp(text)
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from exc


def _candidates(text: str) -> list[float]:
    try:
        return [float(c) for c in text.split(",") if c.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"bad candidate list {text!r}") from exc


def _mover_config(ctx: _Context) -> MoverConfig:
    return load_daemon_config(ctx.config_path).mover


def _load_source(path: Path, column: str, sensor: int, max_gap: timedelta) -> TimeSeries:
    columns, errors, _, _ = read_measurement_csv(path, {column: sensor})
    if errors:
        logger.warning("[source] %s: %d unparseable cells skipped", path, len(errors))
    ts, vs = columns[sensor]
    return resample_arrays(ts, vs, max_gap, sensor)


def _load_raw_source(path: Path, column: str, sensor: int) -> TimeSeries:
    columns, _, _, _ = read_measurement_csv(path, {column: sensor})
    ts, vs = columns[sensor]
    order = ts.argsort(kind="stable")
    return TimeSeries(sensor=sensor, timestamps=ts[order], values=vs[order])


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------
def cmd_ingest(args: argparse.Namespace, ctx: _Context) -> int:
    config = _mover_config(ctx)
    if args.epsilon:
        config = config.model_copy(update={"epsilons": {**config.epsilons, **dict(args.epsilon)}})
    if args.max_gap is not None:
        config = config.model_copy(update={"max_gap": timedelta(seconds=args.max_gap)})
    catalog = ctx.catalog()
    categories = {e.sensor_id: e.category.value for e in catalog.list_sensors()} if catalog else None
    with ctx.store(catalog) as store:
        result = ingest_file(
            args.file, dict(args.map) if args.map else None, config, store, categories=categories
        )
    sys.stdout.write(models_csv(result.reports, REPORT_COLUMNS))
    for err in result.row_errors:
        print(f"line {err.line}, column {err.column}: {err.message}", file=sys.stderr)
    print(
        f"{result.path}: {result.valid_rows}/{result.total_rows} valid rows, {len(result.row_errors)} row errors",
        file=sys.stderr,
    )
    return 0


def cmd_daemon(args: argparse.Namespace, ctx: _Context) -> int:
    if ctx.config_path is None:
        raise ConfigError("daemon needs --config (or SENSORVAULT_CONFIG_PATH)")
    config = load_daemon_config(ctx.config_path)  # validated before anything is opened
    catalog = ctx.catalog()
    with ctx.store(catalog) as store, StagingStore(
        ctx.staging_path, is_registered=catalog.is_registered if catalog else None
    ) as staging:
        reports = asyncio.run(run_daemon(config, store, staging, catalog, max_ticks=args.max_ticks))
    print(f"daemon stopped: {len(reports)} moves", file=sys.stderr)
    return 0


def _tune_history(args: argparse.Namespace, ctx: _Context, config: MoverConfig) -> TimeSeries:
    if args.source:
        return _load_source(Path(args.source), args.column or str(args.sensor), args.sensor, config.max_gap)
    catalog = ctx.catalog()
    with ctx.store(catalog) as store:
        days = store.days(args.sensor)
        last = store.last_point(args.sensor)
        if not days or last is None:
            raise InsufficientDataError(f"sensor {args.sensor} has no stored history")
        return store.query(
            QuerySpec(sensor=args.sensor, start=day_start(days[0][0]), end=last.timestamp, materialize=1)
        )


def cmd_tune(args: argparse.Namespace, ctx: _Context) -> int:
    daemon_config = load_daemon_config(ctx.config_path)
    config = daemon_config.mover
    history = _tune_history(args, ctx, config)

    steady = daemon_config.steady_state
    overrides = {k: v for k, v in (("start", args.steady_start), ("end", args.steady_end)) if v is not None}
    if args.timezone:
        overrides["timezone"] = args.timezone
    if args.expected is not None:
        overrides["expected_value"] = args.expected
    if overrides:
        steady = SteadyStateSpec.model_validate({**steady.model_dump(), **overrides})

    window = FluctuationWindow(duration=timedelta(hours=args.window_hours))
    day = find_high_fluctuation_day(history, window)
    floor = estimate_noise_floor(history, steady)
    day_series = day_slice(history, day)
    reports = sweep_epsilon(day_series, args.candidates, config.metric)
    epsilon, rationale, fell_back = explain_selection(reports, floor, args.knee)

    sys.stdout.write(models_csv(reports, SWEEP_COLUMNS))
    level = "WARNING: " if fell_back else ""
    print(f"{level}selected epsilon={epsilon:g} on {day} (noise floor {floor:.4g}): {rationale}", file=sys.stderr)

    if args.plot_data:
        columns = {"timestamp": day_series.timestamps, "original": day_series.values}
        for eps in args.candidates:
            kept = simplify(day_series, eps, config.metric)
            columns[f"eps_{eps:g}"] = reconstruct(kept, day_series.timestamps).values
        Path(args.plot_data).write_text(to_csv(pl.DataFrame(columns)))
    return 0


def cmd_query(args: argparse.Namespace, ctx: _Context) -> int:
    spec = QuerySpec(sensor=args.sensor, start=args.start, end=args.end, materialize=args.resolution)
    catalog = ctx.catalog()
    with ctx.store(catalog) as store:
        sys.stdout.write(series_csv(store.query(spec)))
    return 0


def cmd_report(args: argparse.Namespace, ctx: _Context) -> int:
    catalog = ctx.catalog()
    source = _load_raw_source(Path(args.source), args.column or str(args.sensor), args.sensor) if args.source else None
    with ctx.store(catalog) as store:
        store.require_sensor(args.sensor)
        days = [args.day] if args.day else [d for d, _ in store.days(args.sensor)]
        summaries = [report_mod.compression_summary(store, args.sensor, d, source) for d in days]
        if args.plot_data:
            if len(days) != 1:
                raise InsufficientDataError("--plot-data needs exactly one day (use --day)")
            frame = report_mod.plot_frame(store, args.sensor, days[0], source)
            Path(args.plot_data).write_text(to_csv(frame))
    sys.stdout.write(
        models_csv(
            summaries,
            ("sensor", "day", "points_before", "points_after", "reduction", "mae", "rmse", "max_error"),
        )
    )
    return 0


def cmd_gen_synth(args: argparse.Namespace, ctx: _Context) -> int:
    spec = SynthSpec(
        days=args.days,
        start_day=args.start_day,
        clear_sky_peak=args.peak,
        cloud_rate=args.cloud_rate,
        noise_amplitude=args.noise,
        noise_offset=args.noise_offset,
        seed=args.seed,
    )
    out = write_synth_csv(spec, args.out, column=args.column)
    print(f"wrote {spec.days * SECONDS_PER_DAY} rows to {out}", file=sys.stderr)
    return 0


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------
def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="sensorvault", description="Embedded time-series compression store.")
    parser.add_argument("--store", help="store directory (default: $SENSORVAULT_STORE_ROOT or data/store)")
    parser.add_argument("--catalog", help="catalog JSON file (default: data/catalog.json)")
    parser.add_argument("--config", help="daemon/mover YAML config")
    parser.add_argument("--log-level", default=None, help="logging level (default: settings.log_level)")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", help="compress a whole CSV file into the store")
    p.add_argument("file", type=Path)
    p.add_argument("--map", action="append", type=_map_pair, metavar="COLUMN=SENSOR")
    p.add_argument("--epsilon", action="append", type=_epsilon_pair, metavar="SENSOR=EPSILON")
    p.add_argument("--max-gap", type=int, metavar="SECONDS")
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("daemon", help="run the periodic mover until SIGINT/SIGTERM")
    p.add_argument("--max-ticks", type=int, default=None, help=argparse.SUPPRESS)
    p.set_defaults(func=cmd_daemon)

    p = sub.add_parser("tune-epsilon", help="pick an epsilon for a sensor from its history")
    p.add_argument("--sensor", type=int, required=True)
    p.add_argument("--source", help="history CSV (default: the sensor's stored data)")
    p.add_argument("--column", help="CSV column holding the sensor (default: the sensor id)")
    p.add_argument("--candidates", type=_candidates, default=[1.0, 5.0, 10.0, 25.0])
    p.add_argument("--steady-start", help="steady-state window start, HH:MM")
    p.add_argument("--steady-end", help="steady-state window end, HH:MM")
    p.add_argument("--timezone", help="IANA zone of the steady-state window")
    p.add_argument("--expected", type=float, help="expected steady-state value")
    p.add_argument("--window-hours", type=float, default=2.0)
    p.add_argument("--knee", type=float, default=0.01)
    p.add_argument("--plot-data", help="write per-second original and per-candidate reconstructions here")
    p.set_defaults(func=cmd_tune)

    p = sub.add_parser("query", help="print stored or materialized points as CSV")
    p.add_argument("--sensor", type=int, required=True)
    p.add_argument("--start", type=_timestamp, required=True)
    p.add_argument("--end", type=_timestamp, required=True)
    p.add_argument("--resolution", type=int, default=None, metavar="SECONDS")
    p.set_defaults(func=cmd_query)

    p = sub.add_parser("report", help="compression summary per stored day")
    p.add_argument("--sensor", type=int, required=True)
    p.add_argument("--day", type=date.fromisoformat)
    p.add_argument("--source", help="original measurements CSV for error metrics")
    p.add_argument("--column")
    p.add_argument("--plot-data", help="write per-second original vs reconstructed values here")
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("gen-synth", help="write a seeded synthetic PAR history CSV")
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--days", type=int, default=1)
    p.add_argument("--start-day", type=date.fromisoformat, default=date(2024, 6, 1))
    p.add_argument("--peak", type=float, default=2000.0)
    p.add_argument("--cloud-rate", type=float, default=6.0)
    p.add_argument("--noise", type=float, default=5.0)
    p.add_argument("--noise-offset", type=float, default=1.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--column", default="1")
    p.set_defaults(func=cmd_gen_synth)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    settings = Settings()
    logging.basicConfig(
        level=(args.log_level or settings.log_level).upper(),
        format="%(asctime)s  %(name)-28s  %(levelname)-7s  %(message)s",
        stream=sys.stderr,
    )
    ctx = _Context(args, settings)
    try:
        return args.func(args, ctx)
    except (SensorVaultError, ValidationError, OSError) as exc:
        print(f"sensorvault {args.command}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
