"""
Exception hierarchy for the SensorVault storage engine.

Every error raised on purpose derives from ``SensorVaultError`` so the CLI can
turn it into a one-line diagnostic and a non-zero exit code.
"""

from __future__ import annotations


class SensorVaultError(Exception):
    """Root of all engine errors."""


# ---------------------------------------------------------------------------
# Argument / data errors
# ---------------------------------------------------------------------------
class OrderingError(SensorVaultError, ValueError):
    """Timestamps violate a required ordering."""


class EmptyInputError(SensorVaultError, ValueError):
    """An operation received an empty series."""


class OutOfRangeError(SensorVaultError, ValueError):
    """A timestamp lies outside the span a series can answer for."""


class InsufficientDataError(SensorVaultError, ValueError):
    """Not enough samples to compute the requested result."""


class InvalidArgumentError(SensorVaultError, ValueError):
    pass


# ---------------------------------------------------------------------------
# Sensor identity
# ---------------------------------------------------------------------------
class UnregisteredSensorError(SensorVaultError, LookupError):
    """Data arrived for a sensor the catalog does not know."""


class UnknownSensorError(SensorVaultError, LookupError):
    pass


# ---------------------------------------------------------------------------
# Store
# ---------------------------------------------------------------------------
class StoreError(SensorVaultError):
    pass


class SealedSegmentError(StoreError):
    """New points were routed into a day that is already sealed."""


class ConflictError(StoreError):
    """A timestamp is already stored with a different value."""


class NothingToSealError(StoreError):
    pass


class NotYetSealableError(StoreError):
    """The day has not fully elapsed in UTC."""


class CorruptionError(StoreError):
    """On-disk bytes failed their integrity check."""


# ---------------------------------------------------------------------------
# Catalog
# ---------------------------------------------------------------------------
class CatalogError(SensorVaultError):
    pass


class IntegrityError(CatalogError):
    """A write would leave a dangling or cross-site reference."""


class DuplicateError(CatalogError):
    pass


class UnknownEntityError(CatalogError, LookupError):
    pass


# ---------------------------------------------------------------------------
# Ingestion / configuration
# ---------------------------------------------------------------------------
class FileIngestError(SensorVaultError):
    """A batch file could not be used at all (unreadable or zero valid rows)."""


class ConfigError(SensorVaultError):
    pass
