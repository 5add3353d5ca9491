"""
Command line: every sub-command end to end through `main(argv)`, with the
store, catalog and config pointed at a temporary directory.
"""

from __future__ import annotations

import io
from datetime import date

import polars as pl
import pytest

from app.main import main
from app.schemas import QuerySpec, day_start
from app.store.engine import SegmentStore
from app.utils.tables import series_csv

T0 = day_start(date(2024, 6, 1))


@pytest.fixture
def cli(tmp_path, capsys):
    """Run the CLI against tmp paths; returns (exit code, stdout, stderr)."""
    store = tmp_path / "store"
    catalog = tmp_path / "catalog.json"

    def run(*argv: str) -> tuple[int, str, str]:
        code = main(["--store", str(store), "--catalog", str(catalog), *argv])
        captured = capsys.readouterr()
        return code, captured.out, captured.err

    run.store = store
    return run


def read(text: str) -> pl.DataFrame:
    return pl.read_csv(io.BytesIO(text.encode()))


def write_rows(path, rows, header="timestamp,1"):
    path.write_text(header + "\n" + "\n".join(",".join(str(c) for c in r) for r in rows) + "\n")
    return path


@pytest.fixture
def synth_csv(cli, tmp_path):
    out = tmp_path / "synth.csv"
    code, _, _ = cli("gen-synth", "--out", str(out), "--seed", "3")
    assert code == 0
    return out


# ---------------------------------------------------------------------------
# gen-synth / ingest
# ---------------------------------------------------------------------------
def test_gen_synth_is_byte_identical(cli, tmp_path):
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    for out in (a, b):
        assert cli("gen-synth", "--out", str(out), "--seed", "42")[0] == 0
    assert a.read_bytes() == b.read_bytes()
    frame = pl.read_csv(a)
    assert frame.columns == ["timestamp", "1"]
    assert frame.height == 86_400


def test_ingest_twice_is_idempotent(cli, synth_csv):
    code, out, _ = cli("ingest", str(synth_csv))
    assert code == 0
    first = read(out)
    assert first["appended_count"][0] > 0
    assert first["kept_count"][0] < 0.05 * 86_400

    with SegmentStore(cli.store) as store:
        before = store.query(QuerySpec(sensor=1, start=T0, end=T0 + 86_399))

    code, out, _ = cli("ingest", str(synth_csv))
    assert code == 0
    assert read(out)["appended_count"][0] == 0
    with SegmentStore(cli.store) as store:
        assert store.query(QuerySpec(sensor=1, start=T0, end=T0 + 86_399)) == before


def test_ingest_reports_row_errors_on_stderr(cli, tmp_path):
    csv = write_rows(tmp_path / "x.csv", [[T0, 1.0], [T0 + 1, "n/a"], [T0 + 2, 3.0]])
    code, out, err = cli("ingest", str(csv))
    assert code == 0
    assert "line 3, column 1" in err
    assert "2/3 valid rows" in err
    assert read(out)["sensor"].to_list() == [1]


def test_ingest_with_column_map_and_epsilon(cli, tmp_path):
    csv = write_rows(tmp_path / "m.csv", [[T0 + i, i % 3] for i in range(100)], header="timestamp,par")
    code, out, _ = cli("ingest", str(csv), "--map", "par=7", "--epsilon", "7=10")
    assert code == 0
    row = read(out).row(0, named=True)
    assert (row["sensor"], row["epsilon"], row["kept_count"]) == (7, 10.0, 2)


def test_ingest_missing_file_fails(cli, tmp_path):
    code, _, err = cli("ingest", str(tmp_path / "nope.csv"))
    assert code == 1
    assert "nope.csv" in err


# ---------------------------------------------------------------------------
# query
# ---------------------------------------------------------------------------
@pytest.fixture
def ramp_store(cli, tmp_path):
    csv = write_rows(tmp_path / "ramp.csv", [[T0, 0.0], [T0 + 10, 10.0]])
    assert cli("ingest", str(csv))[0] == 0
    return cli


def test_query_materialized_grid(ramp_store):
    code, out, _ = ramp_store("query", "--sensor", "1", "--start", str(T0), "--end", str(T0 + 10), "--resolution", "1")
    assert code == 0
    frame = read(out)
    assert frame.height == 11
    assert frame["value"].to_list() == pytest.approx([float(i) for i in range(11)])


def test_query_raw_matches_library_encoding(ramp_store):
    code, out, _ = ramp_store("query", "--sensor", "1", "--start", "2024-06-01T00:00:00Z", "--end", str(T0 + 100))
    assert code == 0
    with SegmentStore(ramp_store.store) as store:
        expected = series_csv(store.query(QuerySpec(sensor=1, start=T0, end=T0 + 100)))
    assert out == expected
    assert read(out).height == 2


def test_query_empty_range_prints_header_only(ramp_store):
    code, out, _ = ramp_store("query", "--sensor", "1", "--start", str(T0 + 500), "--end", str(T0 + 600))
    assert code == 0
    assert out.strip() == "timestamp,value"


def test_query_unknown_sensor_fails(ramp_store):
    code, _, err = ramp_store("query", "--sensor", "99", "--start", str(T0), "--end", str(T0 + 10))
    assert code == 1
    assert "99" in err


# ---------------------------------------------------------------------------
# report
# ---------------------------------------------------------------------------
def test_report_constant_day(cli, tmp_path):
    csv = write_rows(tmp_path / "flat.csv", [[T0 + i, 4.0] for i in range(3600)])
    cli("ingest", str(csv))
    code, out, _ = cli("report", "--sensor", "1")
    assert code == 0
    row = read(out).row(0, named=True)
    assert (row["points_before"], row["points_after"]) == (3600, 2)
    assert row["reduction"] == pytest.approx(3598 / 3600)


def test_report_with_source_and_plot_data(cli, synth_csv, tmp_path):
    cli("ingest", str(synth_csv))
    plot = tmp_path / "plot.csv"
    code, out, _ = cli(
        "report", "--sensor", "1", "--day", "2024-06-01", "--source", str(synth_csv), "--plot-data", str(plot)
    )
    assert code == 0
    row = read(out).row(0, named=True)
    assert row["max_error"] <= 5.0
    frame = pl.read_csv(plot)
    assert frame.columns == ["timestamp", "original", "reconstructed"]
    assert frame.height == 86_400


def test_report_unknown_sensor_fails(cli):
    code, _, _ = cli("report", "--sensor", "5")
    assert code == 1


# ---------------------------------------------------------------------------
# tune-epsilon
# ---------------------------------------------------------------------------
def test_tune_epsilon_from_csv(cli, synth_csv, tmp_path):
    plot = tmp_path / "sweep.csv"
    code, out, err = cli(
        "tune-epsilon", "--sensor", "1", "--source", str(synth_csv), "--candidates", "1,5,10,25",
        "--plot-data", str(plot),
    )
    assert code == 0
    frame = read(out)
    assert frame.columns == ["epsilon", "kept_points", "reduction", "mae", "rmse", "max_error"]
    assert frame["epsilon"].to_list() == [1.0, 5.0, 10.0, 25.0]
    assert "selected epsilon=" in err
    assert pl.read_csv(plot).columns == ["timestamp", "original", "eps_1", "eps_5", "eps_10", "eps_25"]


def test_tune_epsilon_from_the_store(cli, synth_csv):
    cli("ingest", str(synth_csv))
    code, out, err = cli("tune-epsilon", "--sensor", "1", "--candidates", "5,25")
    assert code == 0
    assert read(out).height == 2
    assert "selected epsilon=" in err


def test_tune_epsilon_needs_a_full_day(cli, tmp_path):
    csv = write_rows(tmp_path / "short.csv", [[T0 + i, i % 4] for i in range(3600)])
    code, _, err = cli("tune-epsilon", "--sensor", "1", "--source", str(csv))
    assert code == 1
    assert "full day" in err


# ---------------------------------------------------------------------------
# daemon
# ---------------------------------------------------------------------------
def test_daemon_rejects_malformed_config_before_opening_anything(cli, tmp_path):
    config = tmp_path / "bad.yaml"
    config.write_text("version: 1\nmover: [not, a, mapping]\n")
    code, _, err = cli("--config", str(config), "daemon")
    assert code == 1
    assert "bad.yaml" in err
    assert not cli.store.exists()


def test_daemon_requires_a_config(cli):
    code, _, err = cli("daemon")
    assert code == 1
    assert "--config" in err


def test_daemon_single_tick(cli, tmp_path):
    config = tmp_path / "ok.yaml"
    config.write_text('version: 1\nmover:\n  period: "00:00:01"\n')
    code, _, err = cli("--config", str(config), "daemon", "--max-ticks", "1")
    assert code == 0
    assert "0 moves" in err
