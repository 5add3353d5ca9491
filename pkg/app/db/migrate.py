"""
Alembic-free migration helper for the staging database.

Run `python -m app.db.migrate [path]` to create / verify the tables.
"""

from __future__ import annotations

import logging
import sys

from sqlalchemy import Engine

from app.config import settings
from app.db.models import Base
from app.db.session import create_staging_engine

logger = logging.getLogger("sensorvault.db")


def run_migrations(engine: Engine) -> None:
    Base.metadata.create_all(engine)
    logger.info("[run_migrations] staging tables created / verified at %s", engine.url)


if __name__ == "__main__":
    logging.basicConfig(level=logging.INFO)
    target = sys.argv[1] if len(sys.argv) > 1 else settings.staging_path
    eng = create_staging_engine(target)
    run_migrations(eng)
    eng.dispose()
