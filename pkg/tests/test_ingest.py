"""
Ingestion: staging buffer, 1 s resampling, the live mover (snapshots, anchor,
late points, crash replay) and batch CSV files.
"""

from __future__ import annotations

import logging
import threading
from datetime import date, timedelta

import numpy as np
import pytest

from app.core.ingest import ingest_file, parse_timestamp, resample_1s, run_mover
from app.db.staging import StagingStore
from app.errors import FileIngestError, InsufficientDataError, UnregisteredSensorError
from app.schemas import Gap, MoverConfig, QuerySpec, TimePoint, day_start
from app.store.engine import SegmentStore
from tests.conftest import fixed_clock

T0 = day_start(date(2024, 6, 1)) + 12 * 3600
EPS = 5.0


def points(ts, vs) -> list[TimePoint]:
    return [TimePoint(timestamp=int(t), value=float(v)) for t, v in zip(ts, vs)]


def noisy_batch(start: int, n: int = 300, seed: int = 0) -> list[TimePoint]:
    rng = np.random.default_rng(seed + start)
    ts = np.arange(start, start + n)
    vs = 500 + 200 * np.sin((ts - T0) / 120.0) + rng.normal(0, 3, n)
    return points(ts, np.round(vs, 3))


@pytest.fixture
def config() -> MoverConfig:
    return MoverConfig(default_epsilon=EPS)


class ConcurrentStaging(StagingStore):
    """Stages the next queued batch right after each snapshot, as a live feed would."""

    def __init__(self, *args, **kwargs):
        super().__init__(*args, **kwargs)
        self.arriving: list[tuple[int, list[TimePoint]]] = []

    def snapshot(self, sensor):
        snap = super().snapshot(sensor)
        if self.arriving:
            s, batch = self.arriving.pop(0)
            self.stage_many(s, batch)
        return snap


class StalledStaging(StagingStore):
    """Parks the next write inside its transaction until ``release`` is set."""

    def __init__(self, *args, **kwargs):
        super().__init__(*args, **kwargs)
        self.stall = False
        self.entered = threading.Event()
        self.release = threading.Event()

    def _write_rows(self, s, rows):
        if self.stall:
            self.stall = False
            self.entered.set()
            self.release.wait(5)
        super()._write_rows(s, rows)


# ---------------------------------------------------------------------------
# Staging
# ---------------------------------------------------------------------------
def test_stage_increments_count(staging):
    staging.stage(1, TimePoint(timestamp=100, value=2.5))
    assert staging.count(1) == 1


def test_stage_last_writer_wins(staging):
    staging.stage(1, TimePoint(timestamp=100, value=1.0))
    staging.stage(1, TimePoint(timestamp=100, value=2.0))
    assert staging.points(1) == [TimePoint(timestamp=100, value=2.0)]


def test_staging_does_not_touch_store(staging, store):
    staging.stage_many(1, noisy_batch(T0))
    assert staging.count(1) == 300
    assert store.sensors() == []


def test_stage_unregistered_sensor(tmp_path):
    with StagingStore(tmp_path / "s.db", is_registered=lambda s: s == 1) as staging:
        with pytest.raises(UnregisteredSensorError):
            staging.stage(2, TimePoint(timestamp=1, value=1.0))


def test_staging_survives_reopen(tmp_path):
    path = tmp_path / "s.db"
    with StagingStore(path) as staging:
        staging.stage_many(3, points([1, 2], [1.0, 2.0]))
    with StagingStore(path) as staging:
        assert staging.count(3) == 2
        staging.stage(3, TimePoint(timestamp=2, value=5.0))
        assert staging.points(3)[-1].value == 5.0


def test_write_in_flight_during_a_move_is_not_lost(tmp_path):
    with StalledStaging(tmp_path / "s.db") as staging:
        staging.stage_many(1, noisy_batch(T0, n=10))
        staging.stall = True
        slow = threading.Thread(target=staging.stage, args=(1, TimePoint(timestamp=T0 + 5, value=999.0)))
        slow.start()
        assert staging.entered.wait(5)
        fast = threading.Thread(target=staging.stage, args=(1, TimePoint(timestamp=T0 + 3, value=7.0)))
        fast.start()

        snap = staging.snapshot(1)
        assert (snap.count, snap.seq) == (10, 10)
        staging.load(1, snap.first, snap.last, snap.seq)
        timer = threading.Timer(0.2, staging.release.set)
        timer.start()
        entry = staging.begin_move(1, snap, None)
        staging.finish_move(entry)
        slow.join(5)
        fast.join(5)
        timer.join()

        assert staging.points(1) == [
            TimePoint(timestamp=T0 + 3, value=7.0),
            TimePoint(timestamp=T0 + 5, value=999.0),
        ]


def test_sequence_counter_survives_reopen(tmp_path):
    path = tmp_path / "s.db"
    with StagingStore(path) as staging:
        staging.stage_many(1, points([1, 2, 3], [1.0, 2.0, 3.0]))
        first = staging.snapshot(1).seq
    with StagingStore(path) as staging:
        staging.stage(1, TimePoint(timestamp=4, value=4.0))
        assert staging.snapshot(1).seq == first + 1


# ---------------------------------------------------------------------------
# Resampling
# ---------------------------------------------------------------------------
def test_resample_fills_missing_second():
    out = resample_1s(points([0, 2], [0.0, 2.0]))
    assert out.timestamps.tolist() == [0, 1, 2]
    assert out.values.tolist() == [0.0, 1.0, 2.0]


def test_resample_keeps_regular_series():
    out = resample_1s(points([0, 1], [0.0, 1.0]))
    assert out.timestamps.tolist() == [0, 1]


def test_resample_sorts_and_keeps_last_duplicate():
    out = resample_1s(points([2, 0, 1, 1], [2.0, 0.0, 5.0, 1.0]))
    assert out.values.tolist() == [0.0, 1.0, 2.0]


def test_resample_records_long_gaps():
    ts = list(range(0, 11)) + list(range(3600, 3611))
    out = resample_1s(points(ts, np.ones(len(ts))), max_gap=timedelta(seconds=600))
    assert len(out) == 22
    assert out.gaps == (Gap(start=10, end=3600),)


def test_resample_interpolates_up_to_max_gap():
    out = resample_1s(points([0, 600], [0.0, 600.0]), max_gap=timedelta(seconds=600))
    assert len(out) == 601
    assert out.gaps == ()


def test_resample_needs_two_distinct_points():
    with pytest.raises(InsufficientDataError):
        resample_1s(points([5, 5], [1.0, 2.0]))


# ---------------------------------------------------------------------------
# Mover
# ---------------------------------------------------------------------------
def test_constant_batch_compresses_to_two_points(staging, store, config):
    staging.stage_many(1, points(range(T0, T0 + 300), np.full(300, 7.0)))
    report = run_mover(1, config, store, staging, clock=fixed_clock)
    assert (report.staged_count, report.resampled_count, report.kept_count) == (300, 300, 2)
    assert report.appended_count == 2
    assert (report.first, report.last) == (T0, T0 + 299)
    assert staging.count(1) == 0


def test_too_few_staged_points_wait(staging, store, config):
    staging.stage(1, TimePoint(timestamp=T0, value=1.0))
    report = run_mover(1, config, store, staging)
    assert report.is_empty and report.staged_count == 1
    assert staging.count(1) == 1


def test_three_batches_conserve_data(tmp_path, store, config):
    """Points staged during a move stay; the anchor keeps batch joins within epsilon."""
    batches = [noisy_batch(T0 + i * 300) for i in range(3)]
    with ConcurrentStaging(tmp_path / "s.db") as staging:
        staging.stage_many(1, batches[0])
        staging.arriving = [(1, batches[1]), (1, batches[2])]
        for i in range(3):
            run_mover(1, config, store, staging, clock=fixed_clock)
            expected = batches[i + 1] if i < 2 else []
            assert staging.points(1) == expected

    original = np.array([p.value for b in batches for p in b])
    out = store.query(QuerySpec(sensor=1, start=T0, end=T0 + 899, materialize=1))
    assert out.timestamps.tolist() == list(range(T0, T0 + 900))
    assert np.max(np.abs(out.values - original)) <= EPS


def test_crash_between_append_and_delete_is_replayed(staging, store, config, monkeypatch):
    batch = noisy_batch(T0)
    staging.stage_many(1, batch)
    finish = staging.finish_move

    def crash(*args, **kwargs):
        raise RuntimeError("power cut")

    monkeypatch.setattr(staging, "finish_move", crash)
    with pytest.raises(RuntimeError):
        run_mover(1, config, store, staging)
    stored = store.query(QuerySpec(sensor=1, start=T0, end=T0 + 299))
    assert staging.count(1) == 300
    assert staging.pending_move(1) is not None

    monkeypatch.setattr(staging, "finish_move", finish)
    report = run_mover(1, config, store, staging, clock=fixed_clock)
    assert report.replayed
    assert report.appended_count == 0
    assert staging.count(1) == 0
    assert staging.pending_move(1) is None
    assert store.query(QuerySpec(sensor=1, start=T0, end=T0 + 299)) == stored
    assert [m.status for m in staging.moves(1)] == ["done"]


def test_late_points_are_dropped_with_warning(staging, store, config, caplog):
    staging.stage_many(1, noisy_batch(T0))
    run_mover(1, config, store, staging)
    before = store.query(QuerySpec(sensor=1, start=T0, end=T0 + 299))

    staging.stage_many(1, [TimePoint(timestamp=T0 + 100, value=9999.0), *noisy_batch(T0 + 300)])
    with caplog.at_level(logging.WARNING, logger="sensorvault.ingest"):
        report = run_mover(1, config, store, staging)
    assert report.late_count == 1
    assert "discarding 1 staged points" in caplog.text
    assert store.query(QuerySpec(sensor=1, start=T0, end=T0 + 299)) == before
    assert staging.count(1) == 0


def test_points_on_sealed_days_are_dropped_and_the_move_closes(staging, store, config, caplog):
    staging.stage_many(1, noisy_batch(T0))
    run_mover(1, config, store, staging)
    store.seal_day(1, date(2024, 6, 1))

    next_day = day_start(date(2024, 6, 2))
    staging.stage_many(1, noisy_batch(next_day - 7200) + noisy_batch(next_day + 60))
    with caplog.at_level(logging.WARNING, logger="sensorvault.ingest"):
        report = run_mover(1, config, store, staging)
    assert report.sealed_count == 300
    assert report.late_count == 0
    assert "fall on sealed days" in caplog.text
    assert staging.count(1) == 0
    assert staging.pending_move(1) is None
    assert store.last_point(1).timestamp == next_day + 60 + 299
    assert store.days(1) == [(date(2024, 6, 1), True), (date(2024, 6, 2), False)]

    # the sensor keeps moving afterwards
    staging.stage_many(1, noisy_batch(next_day + 360))
    assert run_mover(1, config, store, staging).appended_count > 0


def test_distant_batches_record_a_gap(staging, store, config):
    staging.stage_many(1, noisy_batch(T0))
    run_mover(1, config, store, staging)
    later = T0 + 300 + 3600
    staging.stage_many(1, noisy_batch(later))
    report = run_mover(1, config, store, staging)
    assert report.gaps == [Gap(start=T0 + 299, end=later)]

    out = store.query(QuerySpec(sensor=1, start=T0, end=later + 299, materialize=1))
    assert len(out) == 600
    assert Gap(start=T0 + 299, end=later) in out.gaps


def test_per_sensor_and_category_epsilon(staging, store):
    config = MoverConfig(default_epsilon=5, epsilons={2: 0.5}, category_epsilons={"wind_speed": 1.0})
    staging.stage_many(1, noisy_batch(T0))
    staging.stage_many(2, noisy_batch(T0))
    assert run_mover(1, config, store, staging, category="wind_speed").epsilon == 1.0
    assert run_mover(2, config, store, staging, category="wind_speed").epsilon == 0.5


# ---------------------------------------------------------------------------
# Batch files
# ---------------------------------------------------------------------------
def write_csv(path, header: list[str], rows: list[list[object]]):
    lines = [",".join(header)] + [",".join("" if c is None else str(c) for c in r) for r in rows]
    path.write_text("\n".join(lines) + "\n")
    return path


def test_constant_file_keeps_two_points(tmp_path, store, config):
    csv = write_csv(tmp_path / "day.csv", ["timestamp", "1"], [[T0 + i, 3.0] for i in range(3600)])
    result = ingest_file(csv, None, config, store, clock=fixed_clock)
    (report,) = result.reports
    assert report.kept_count == 2
    assert result.valid_rows == result.total_rows == 3600


def test_one_report_per_sensor_column(tmp_path, store, config):
    rows = [[T0 + i, i, 2 * i, None if i % 2 else 1.0] for i in range(100)]
    csv = write_csv(tmp_path / "three.csv", ["timestamp", "1", "2", "3"], rows)
    result = ingest_file(csv, None, config, store, clock=fixed_clock)
    assert [r.sensor for r in result.reports] == [1, 2, 3]
    assert result.reports[2].staged_count == 50


def test_explicit_column_mapping_and_iso_timestamps(tmp_path, store, config):
    rows = [[f"2024-06-01T12:00:{i:02d}Z", 1.0] for i in range(10)]
    csv = write_csv(tmp_path / "iso.csv", ["timestamp", "par"], rows)
    result = ingest_file(csv, {"par": 42}, config, store, clock=fixed_clock)
    assert result.reports[0].sensor == 42
    assert result.reports[0].first == T0


def test_malformed_rows_are_reported_not_fatal(tmp_path, store, config):
    rows = [[T0 + i, "oops" if i % 100 == 0 else 1.0] for i in range(1000)]
    csv = write_csv(tmp_path / "bad.csv", ["timestamp", "1"], rows)
    result = ingest_file(csv, None, config, store, clock=fixed_clock)
    assert len(result.row_errors) == 10
    assert result.valid_rows == 990
    assert result.row_errors[0].line == 2


def test_file_without_valid_rows_fails(tmp_path, store, config):
    csv = write_csv(tmp_path / "none.csv", ["timestamp", "1"], [["yesterday", 1.0], [T0, "x"]])
    with pytest.raises(FileIngestError):
        ingest_file(csv, None, config, store)


def test_first_column_must_be_timestamp(tmp_path, store, config):
    csv = write_csv(tmp_path / "hdr.csv", ["time", "1"], [[T0, 1.0]])
    with pytest.raises(FileIngestError):
        ingest_file(csv, None, config, store)


def test_same_file_gives_same_reports(tmp_path, config, par_day):
    csv = tmp_path / "par.csv"
    write_csv(csv, ["timestamp", "1"], [[int(t), v] for t, v in zip(par_day.timestamps[:7200], par_day.values[:7200])])
    dumps = []
    for run in range(2):
        with SegmentStore(tmp_path / f"store{run}", clock=fixed_clock) as store:
            result = ingest_file(csv, None, config, store, clock=fixed_clock)
            dumps.append([r.model_dump() for r in result.reports])
    assert dumps[0] == dumps[1]


def test_parse_timestamp_forms():
    assert parse_timestamp("1717243200") == T0
    assert parse_timestamp("2024-06-01T12:00:00Z") == T0
    assert parse_timestamp("2024-06-01 14:00:00+02:00") == T0
    assert parse_timestamp("2024-06-01T12:00:00") == T0
    with pytest.raises(ValueError):
        parse_timestamp("noon")
