"""
Periodic mover daemon.

Each tick moves staged points on worker threads, one task per sensor (a
failure is logged and the other sensors carry on). It then ingests the CSV
files waiting in the inbox and seals days past their grace delay.
Staging writes go straight to SQLite and never wait for a tick.

SIGINT / SIGTERM set a stop flag; the tick in flight finishes before the
loop returns. Only the most recent ``report_history`` move reports are kept;
``move_count`` counts them all.
"""

from __future__ import annotations

import asyncio
import logging
import shutil
import signal
from collections import deque
from collections.abc import Callable
from concurrent.futures import ThreadPoolExecutor
from datetime import datetime, timedelta, timezone
from functools import partial
from pathlib import Path

from pydantic import ValidationError

from app.catalog.service import Catalog
from app.config import DaemonConfig
from app.core.ingest import ingest_file, run_mover
from app.db.staging import StagingStore
from app.errors import NothingToSealError, SensorVaultError
from app.schemas import MoveReport, day_start
from app.store.engine import SegmentStore

logger = logging.getLogger("sensorvault.daemon")


def _utcnow() -> datetime:
    return datetime.now(timezone.utc)


def resolve_sensors(config: DaemonConfig, staging: StagingStore, catalog: Catalog | None) -> list[int]:
    """Configured roster, else every registered sensor, else whatever is staged."""
    if config.sensors:
        return sorted(set(config.sensors))
    if catalog is not None:
        return [e.sensor_id for e in catalog.list_sensors()]
    return staging.sensors()


def due_days(store: SegmentStore, sensor: int, now: datetime, seal_after: timedelta):
    """Open days whose next midnight plus ``seal_after`` has passed."""
    stamp = now.timestamp()
    for day, sealed in store.days(sensor):
        if not sealed and stamp >= day_start(day + timedelta(days=1)) + seal_after.total_seconds():
            yield day


class MoverDaemon:
    def __init__(
        self,
        config: DaemonConfig,
        store: SegmentStore,
        staging: StagingStore,
        catalog: Catalog | None = None,
        *,
        clock: Callable[[], datetime] = _utcnow,
    ):
        self.config = config
        self.store = store
        self.staging = staging
        self.catalog = catalog
        self.clock = clock
        self.stop = asyncio.Event()
        self.reports: deque[MoveReport] = deque(maxlen=config.report_history)
        self.move_count = 0
        self.ticks = 0

    def _record(self, reports: list[MoveReport]) -> None:
        self.reports.extend(reports)
        self.move_count += len(reports)

    # -- per-tick work ----------------------------------------------------------
    def _move(self, sensor: int) -> MoveReport:
        category = self.catalog.category_of(sensor) if self.catalog is not None else None
        return run_mover(sensor, self.config.mover, self.store, self.staging, category=category, clock=self.clock)

    def _seal_due(self, sensor: int) -> int:
        sealed = 0
        for day in list(due_days(self.store, sensor, self.clock(), self.config.seal_after)):
            try:
                self.store.seal_day(sensor, day)
                sealed += 1
            except NothingToSealError:
                continue
        return sealed

    def _ingest_inbox_file(self, path: Path) -> str:
        categories = None
        if self.catalog is not None:
            categories = {e.sensor_id: e.category.value for e in self.catalog.list_sensors()}
        try:
            result = ingest_file(path, None, self.config.mover, self.store, categories=categories, clock=self.clock)
        except (SensorVaultError, ValidationError, OSError):
            logger.exception("[inbox] %s failed", path.name)
            target = "failed"
        else:
            self._record(result.reports)
            target = "done"
        dest = path.parent / target
        dest.mkdir(exist_ok=True)
        shutil.move(str(path), dest / path.name)
        return target

    async def _gather_logged(self, loop, pool, label: str, fn, items) -> list:
        futures = [loop.run_in_executor(pool, partial(fn, item)) for item in items]
        results = await asyncio.gather(*futures, return_exceptions=True)
        ok = []
        for item, res in zip(items, results):
            if isinstance(res, BaseException):
                logger.error("[%s] %s failed: %s", label, item, res, exc_info=res)
            else:
                ok.append(res)
        return ok

    async def tick(self, loop: asyncio.AbstractEventLoop, pool: ThreadPoolExecutor) -> list[MoveReport]:
        sensors = resolve_sensors(self.config, self.staging, self.catalog)
        moved = await self._gather_logged(loop, pool, "mover", self._move, sensors)
        moved = [r for r in moved if not r.is_empty]
        self._record(moved)

        inbox = self.config.inbox_dir
        if inbox is not None and inbox.is_dir():
            # files one at a time; two files may share a sensor
            for path in sorted(inbox.glob("*.csv")):
                await loop.run_in_executor(pool, self._ingest_inbox_file, path)

        await self._gather_logged(loop, pool, "seal", self._seal_due, self.store.sensors())
        self.ticks += 1
        logger.info("[tick] #%d: %d sensors, %d non-empty moves", self.ticks, len(sensors), len(moved))
        return moved

    # -- loop -------------------------------------------------------------------
    def _install_signal_handlers(self, loop: asyncio.AbstractEventLoop) -> None:
        for sig in (signal.SIGINT, signal.SIGTERM):
            try:
                loop.add_signal_handler(sig, self.request_stop)
            except (NotImplementedError, RuntimeError, ValueError):
                logger.debug("[daemon] cannot install handler for %s here", sig)

    def request_stop(self) -> None:
        if not self.stop.is_set():
            logger.info("[daemon] shutdown requested; finishing current tick")
        self.stop.set()

    async def run(self, max_ticks: int | None = None) -> list[MoveReport]:
        loop = asyncio.get_running_loop()
        self._install_signal_handlers(loop)
        period = self.config.mover.period.total_seconds()
        logger.info(
            "[daemon] started: period=%ss workers=%d inbox=%s", period, self.config.workers, self.config.inbox_dir
        )
        with ThreadPoolExecutor(max_workers=self.config.workers, thread_name_prefix="mover") as pool:
            while not self.stop.is_set():
                await self.tick(loop, pool)
                if max_ticks is not None and self.ticks >= max_ticks:
                    break
                try:
                    await asyncio.wait_for(self.stop.wait(), timeout=period)
                except asyncio.TimeoutError:
                    pass
        logger.info("[daemon] stopped after %d ticks, %d moves", self.ticks, self.move_count)
        return list(self.reports)


async def run_daemon(
    config: DaemonConfig,
    store: SegmentStore,
    staging: StagingStore,
    catalog: Catalog | None = None,
    *,
    clock: Callable[[], datetime] = _utcnow,
    max_ticks: int | None = None,
) -> list[MoveReport]:
    """Run until a shutdown signal (or ``max_ticks``); returns the most recent reports."""
    daemon = MoverDaemon(config, store, staging, catalog, clock=clock)
    return await daemon.run(max_ticks=max_ticks)
