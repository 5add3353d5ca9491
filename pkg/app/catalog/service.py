"""
Catalog service: referential integrity, sensor registration and lineage
over a single versioned JSON document.

Writes are serialized by a lock and applied to a copy of the document; the
copy is validated, written atomically (temp file + rename) and only then
becomes the snapshot readers see.
"""

from __future__ import annotations

import json
import logging
import os
import threading
from collections.abc import Callable
from datetime import datetime, timezone
from pathlib import Path
from typing import Any

from pydantic import TypeAdapter, ValidationError

from app.catalog.models import (
    COLLECTIONS,
    SCHEMA_VERSION,
    CatalogDocument,
    CatalogEntity,
    SensorCategory,
    SensorDescriptor,
    SensorRegistryEntry,
)
from app.errors import CatalogError, DuplicateError, IntegrityError, UnknownEntityError, UnknownSensorError

logger = logging.getLogger("sensorvault.catalog")

_ENTITY = TypeAdapter(CatalogEntity)

# kind -> [(field, referenced kind)]
REFERENCES: dict[str, list[tuple[str, str]]] = {
    "site": [("operator_id", "operator")],
    "tracker": [("site_id", "site"), ("hardware_id", "hardware")],
    "inverter": [("site_id", "site"), ("hardware_id", "hardware"), ("datasheet_id", "inverter_datasheet")],
    "battery": [("site_id", "site"), ("hardware_id", "hardware"), ("inverter_id", "inverter")],
    "pv_module": [
        ("site_id", "site"),
        ("hardware_id", "hardware"),
        ("datasheet_id", "pv_datasheet"),
        ("inverter_id", "inverter"),
        ("tracker_id", "tracker"),
    ],
    "sensor": [
        ("site_id", "site"),
        ("hardware_id", "hardware"),
        ("module_id", "pv_module"),
        ("inverter_id", "inverter"),
        ("battery_id", "battery"),
    ],
}


def parse_entity(data: dict[str, Any]) -> Any:
    """Build a catalog entity from a plain mapping carrying a ``kind`` tag."""
    return _ENTITY.validate_python(data)


class Catalog:
    def __init__(self, path: Path | str, *, clock: Callable[[], datetime] | None = None):
        self.path = Path(path)
        self._clock = clock or (lambda: datetime.now(timezone.utc))
        self._lock = threading.Lock()
        self._doc = self._load()

    # -- persistence ----------------------------------------------------------
    def _load(self) -> CatalogDocument:
        if not self.path.exists():
            return CatalogDocument()
        try:
            raw = json.loads(self.path.read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise CatalogError(f"{self.path}: unreadable catalog: {exc}") from exc
        version = raw.get("schema_version") if isinstance(raw, dict) else None
        if version != SCHEMA_VERSION:
            raise CatalogError(f"{self.path}: unsupported catalog schema_version {version!r}")
        try:
            return CatalogDocument.model_validate(raw)
        except ValidationError as exc:
            raise CatalogError(f"{self.path}: invalid catalog document: {exc}") from exc

    def _persist(self, doc: CatalogDocument) -> None:
        self.path.parent.mkdir(parents=True, exist_ok=True)
        tmp = self.path.with_suffix(self.path.suffix + ".tmp")
        with open(tmp, "w", encoding="utf-8") as fh:
            fh.write(doc.model_dump_json(indent=2))
            fh.flush()
            os.fsync(fh.fileno())
        os.replace(tmp, self.path)
        self._doc = doc

    @property
    def document(self) -> CatalogDocument:
        return self._doc

    # -- lookups --------------------------------------------------------------
    @classmethod
    def _find(cls, doc: CatalogDocument, kind: str, entity_id: int, category: SensorCategory | None = None):
        if kind == "sensor":
            rows = doc.sensor_tables.get(category, []) if category is not None else []
        else:
            rows = getattr(doc, COLLECTIONS[kind])
        return next((r for r in rows if r.id == entity_id), None)

    def get(self, kind: str, entity_id: int, category: SensorCategory | None = None):
        if kind not in COLLECTIONS and kind != "sensor":
            raise UnknownEntityError(f"unknown entity kind {kind!r}")
        found = self._find(self._doc, kind, entity_id, category)
        if found is None:
            raise UnknownEntityError(f"{kind} {entity_id} does not exist")
        return found

    def registry_entry(self, sensor_id: int) -> SensorRegistryEntry:
        entry = next((e for e in self._doc.registry if e.sensor_id == sensor_id), None)
        if entry is None:
            raise UnknownSensorError(f"sensor {sensor_id} is not registered")
        return entry

    def descriptor(self, sensor_id: int) -> SensorDescriptor:
        entry = self.registry_entry(sensor_id)
        return self._find(self._doc, "sensor", entry.category_local_id, entry.category)

    def is_registered(self, sensor_id: int) -> bool:
        return any(e.sensor_id == sensor_id and not e.deleted for e in self._doc.registry)

    def category_of(self, sensor_id: int) -> str | None:
        entry = next((e for e in self._doc.registry if e.sensor_id == sensor_id), None)
        return entry.category.value if entry else None

    # -- integrity ------------------------------------------------------------
    def _check_references(self, doc: CatalogDocument, entity, previous) -> None:
        site_id = getattr(entity, "site_id", None)
        for field, target_kind in REFERENCES.get(entity.kind, []):
            ref = getattr(entity, field)
            if ref is None:
                continue
            target = self._find(doc, target_kind, ref)
            if target is None:
                raise IntegrityError(f"{entity.kind}.{field}={ref}: no such {target_kind}")
            unchanged = previous is not None and getattr(previous, field) == ref
            if target.deleted and not unchanged:
                raise IntegrityError(f"{entity.kind}.{field}={ref}: {target_kind} {ref} is deleted")
            target_site = getattr(target, "site_id", None)
            if site_id is not None and target_site is not None and target_site != site_id:
                raise IntegrityError(
                    f"{entity.kind}.{field}={ref}: {target_kind} belongs to site {target_site}, not site {site_id}"
                )

    @staticmethod
    def _check_dependents(doc: CatalogDocument, entity) -> None:
        """Rows that point at ``entity`` must stay on its site after an update."""
        site_id = getattr(entity, "site_id", None)
        if site_id is None:
            return
        tables = [getattr(doc, COLLECTIONS[kind]) for kind in REFERENCES if kind != "sensor"]
        tables += list(doc.sensor_tables.values())
        for rows in tables:
            for row in rows:
                row_site = getattr(row, "site_id", None)
                if row_site is None or row_site == site_id:
                    continue
                for field, target_kind in REFERENCES.get(row.kind, []):
                    if target_kind == entity.kind and getattr(row, field) == entity.id:
                        raise IntegrityError(
                            f"{entity.kind} {entity.id} cannot move to site {site_id}: "
                            f"{row.kind} {row.id} on site {row_site} references it via {field}"
                        )

    @staticmethod
    def _check_unique(doc: CatalogDocument, entity) -> None:
        if entity.kind == "hardware":
            clash = [h for h in doc.hardware if h.serial_number == entity.serial_number and h.id != entity.id]
            if clash:
                raise DuplicateError(f"serial number {entity.serial_number!r} already used by hardware {clash[0].id}")
        elif entity.kind in ("inverter_datasheet", "pv_datasheet"):
            rows = getattr(doc, COLLECTIONS[entity.kind])
            key = (entity.manufacturer, entity.model)
            clash = [d for d in rows if (d.manufacturer, d.model) == key and d.id != entity.id]
            if clash:
                raise DuplicateError(f"{entity.kind} {key} already exists as id {clash[0].id}")

    # -- writes ---------------------------------------------------------------
    def upsert_entity(self, entity) -> int:
        """Insert or replace an entity; returns its id (category-local for sensors)."""
        if isinstance(entity, SensorDescriptor):
            existing = entity.id is not None and self._find(self._doc, "sensor", entity.id, entity.category)
            if not existing:
                self.register_sensor(entity)
                return self._doc.sensor_tables[entity.category][-1].id
        with self._lock:
            doc = self._doc.model_copy(deep=True)
            rows = (
                doc.sensor_tables.setdefault(entity.category, [])
                if isinstance(entity, SensorDescriptor)
                else getattr(doc, COLLECTIONS[entity.kind])
            )
            previous = next((r for r in rows if entity.id is not None and r.id == entity.id), None)
            if previous is not None and previous.deleted:
                raise IntegrityError(f"{entity.kind} {entity.id} is deleted and cannot be updated")
            new_id = entity.id if entity.id is not None else max((r.id for r in rows), default=0) + 1
            entity = entity.model_copy(update={"id": new_id, "deleted": False})
            self._check_references(doc, entity, previous)
            if previous is not None:
                self._check_dependents(doc, entity)
            self._check_unique(doc, entity)
            if previous is not None:
                rows[rows.index(previous)] = entity
            else:
                rows.append(entity)
            self._persist(doc)
        logger.info("[upsert_entity] %s %s %s", "updated" if previous else "inserted", entity.kind, new_id)
        return new_id

    def register_sensor(self, descriptor: SensorDescriptor) -> int:
        """Persist a descriptor and its registry entry in one write; returns the global SensorId."""
        with self._lock:
            doc = self._doc.model_copy(deep=True)
            table = doc.sensor_tables.setdefault(descriptor.category, [])
            if descriptor.id is not None and any(d.id == descriptor.id for d in table):
                raise DuplicateError(f"{descriptor.category.value} sensor {descriptor.id} already registered")
            local_id = descriptor.id if descriptor.id is not None else max((d.id for d in table), default=0) + 1
            descriptor = descriptor.model_copy(update={"id": local_id, "deleted": False})
            self._check_references(doc, descriptor, None)

            sensor_id = doc.next_sensor_id
            table.append(descriptor)
            doc.registry.append(
                SensorRegistryEntry(
                    sensor_id=sensor_id,
                    category=descriptor.category,
                    category_local_id=local_id,
                    registered_at=self._clock(),
                )
            )
            doc.next_sensor_id = sensor_id + 1
            self._persist(doc)
        logger.info(
            "[register_sensor] %s sensor %s registered as global id %s", descriptor.category.value, local_id, sensor_id
        )
        return sensor_id

    def delete_entity(self, kind: str, entity_id: int) -> None:
        """Tombstone an entity; for ``kind='sensor'`` the id is the global SensorId."""
        with self._lock:
            doc = self._doc.model_copy(deep=True)
            if kind == "sensor":
                entry = next((e for e in doc.registry if e.sensor_id == entity_id), None)
                if entry is None:
                    raise UnknownSensorError(f"sensor {entity_id} is not registered")
                entry.deleted = True
                self._find(doc, "sensor", entry.category_local_id, entry.category).deleted = True
            else:
                if kind not in COLLECTIONS:
                    raise UnknownEntityError(f"unknown entity kind {kind!r}")
                target = self._find(doc, kind, entity_id)
                if target is None:
                    raise UnknownEntityError(f"{kind} {entity_id} does not exist")
                target.deleted = True
            self._persist(doc)
        logger.info("[delete_entity] tombstoned %s %s", kind, entity_id)

    # -- reads ----------------------------------------------------------------
    def lineage(self, sensor_id: int) -> list:
        """Chain from the sensor descriptor to its operator."""
        doc = self._doc
        entry = next((e for e in doc.registry if e.sensor_id == sensor_id), None)
        if entry is None:
            raise UnknownSensorError(f"sensor {sensor_id} is not registered")
        sensor = self._find(doc, "sensor", entry.category_local_id, entry.category)
        chain: list = [sensor]

        def step(kind: str, ref: int | None):
            if ref is None:
                return None
            found = self._find(doc, kind, ref)
            if found is None:
                raise IntegrityError(f"lineage of sensor {sensor_id}: {kind} {ref} is missing")
            chain.append(found)
            return found

        inverter_id = None
        if sensor.module_id is not None:
            inverter_id = step("pv_module", sensor.module_id).inverter_id
        elif sensor.battery_id is not None:
            inverter_id = step("battery", sensor.battery_id).inverter_id
        elif sensor.inverter_id is not None:
            inverter_id = sensor.inverter_id
        derived_site = step("inverter", inverter_id).site_id if inverter_id is not None else sensor.site_id
        if derived_site != sensor.site_id:
            raise IntegrityError(
                f"sensor {sensor_id} is filed under site {sensor.site_id} but its equipment sits on site {derived_site}"
            )
        site = step("site", derived_site)
        step("operator", site.operator_id)
        return chain

    def list_sensors(
        self,
        site_id: int | None = None,
        category: SensorCategory | str | None = None,
        *,
        include_deleted: bool = False,
    ) -> list[SensorRegistryEntry]:
        doc = self._doc
        wanted = SensorCategory(category) if category is not None else None
        out = []
        for entry in doc.registry:
            if entry.deleted and not include_deleted:
                continue
            if wanted is not None and entry.category is not wanted:
                continue
            if site_id is not None:
                desc = self._find(doc, "sensor", entry.category_local_id, entry.category)
                if desc.site_id != site_id:
                    continue
            out.append(entry)
        return sorted(out, key=lambda e: e.sensor_id)
