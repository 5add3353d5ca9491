"""
Centralised settings loaded from environment / .env file, plus the
versioned daemon configuration document (YAML).
"""

from __future__ import annotations

from datetime import timedelta
from pathlib import Path

import yaml
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator
from pydantic_settings import BaseSettings, SettingsConfigDict

from app.errors import ConfigError
from app.schemas import MoverConfig, SensorId, SteadyStateSpec

DAEMON_CONFIG_VERSION = 1


class Settings(BaseSettings):
    model_config = SettingsConfigDict(
        env_prefix="SENSORVAULT_",
        env_file=".env",
        env_file_encoding="utf-8",
        extra="ignore",
    )

    # ── Storage ──────────────────────────────────────────────────────
    store_root: Path = Path("data/store")
    catalog_path: Path = Path("data/catalog.json")
    staging_db: Path | None = None

    # ── Runtime ──────────────────────────────────────────────────────
    log_level: str = "info"
    config_path: Path | None = None

    # ── Derived helpers ──────────────────────────────────────────────

    @property
    def staging_path(self) -> Path:
        return self.staging_db if self.staging_db is not None else self.store_root / "staging.db"


settings = Settings()


class DaemonConfig(BaseModel):
    """Contents of the daemon YAML file (``version: 1``)."""

    model_config = ConfigDict(extra="forbid")

    version: int = DAEMON_CONFIG_VERSION
    mover: MoverConfig = Field(default_factory=MoverConfig)
    steady_state: SteadyStateSpec = Field(default_factory=SteadyStateSpec)
    sensors: list[SensorId] = Field(default_factory=list)
    inbox_dir: Path | None = None
    seal_after: timedelta = timedelta(minutes=5)
    workers: int = Field(4, ge=1)
    report_history: int = Field(1000, ge=1)  # recent move reports the daemon keeps in memory

    @field_validator("version")
    @classmethod
    def _known_version(cls, v: int) -> int:
        if v != DAEMON_CONFIG_VERSION:
            raise ValueError(f"unsupported config version {v} (expected {DAEMON_CONFIG_VERSION})")
        return v

    @field_validator("seal_after")
    @classmethod
    def _non_negative(cls, v: timedelta) -> timedelta:
        if v < timedelta(0):
            raise ValueError("seal_after must not be negative")
        return v

    @classmethod
    def from_yaml(cls, path: Path | str) -> DaemonConfig:
        path = Path(path)
        try:
            raw = yaml.safe_load(path.read_text(encoding="utf-8"))
        except (OSError, yaml.YAMLError) as exc:
            raise ConfigError(f"{path}: cannot read config: {exc}") from exc
        if raw is None:
            raw = {}
        if not isinstance(raw, dict):
            raise ConfigError(f"{path}: top level must be a mapping")
        if "version" not in raw:
            raise ConfigError(f"{path}: missing 'version' key")
        try:
            return cls.model_validate(raw)
        except ValidationError as exc:
            raise ConfigError(f"{path}: {exc}") from exc


def load_daemon_config(path: Path | str | None) -> DaemonConfig:
    return DaemonConfig.from_yaml(path) if path is not None else DaemonConfig()
