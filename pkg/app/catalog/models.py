"""
Catalog entities: operators, sites, hardware, datasheets, equipment and
sensor descriptors, plus the global sensor registry.

Every entity carries a ``kind`` tag so a mixed list (a lineage chain, an
upsert payload) can be parsed back through `CatalogEntity`.
"""

from __future__ import annotations

from datetime import datetime, timezone
from enum import Enum
from typing import Annotated, Literal, Union

from pydantic import BaseModel, ConfigDict, Field, model_validator

SCHEMA_VERSION = 1

EntityId = Annotated[int, Field(ge=1)]


class SensorCategory(str, Enum):
    ELECTRICITY = "electricity"
    PV_TEMPERATURE = "pv_temperature"
    IRRADIANCE = "irradiance"
    AMBIENT_TEMPERATURE = "ambient_temperature"
    WIND_SPEED = "wind_speed"
    WIND_DIRECTION = "wind_direction"
    CLIMATE = "climate"


class _Entity(BaseModel):
    model_config = ConfigDict(extra="forbid")

    id: EntityId | None = None
    deleted: bool = False


class Operator(_Entity):
    kind: Literal["operator"] = "operator"
    name: str = Field(min_length=1)
    contact: str = ""


class Site(_Entity):
    kind: Literal["site"] = "site"
    operator_id: EntityId
    name: str = Field(min_length=1)
    latitude: float = Field(ge=-90, le=90)
    longitude: float = Field(ge=-180, le=180)
    elevation: float = 0.0


class HardwareItem(_Entity):
    kind: Literal["hardware"] = "hardware"
    serial_number: str = Field(min_length=1)
    description: str = ""


class RatedParameter(BaseModel):
    value: float
    unit: str = ""


class _Datasheet(_Entity):
    manufacturer: str = Field(min_length=1)
    model: str = Field(min_length=1)
    rated: dict[str, RatedParameter] = Field(default_factory=dict)


class InverterDatasheet(_Datasheet):
    kind: Literal["inverter_datasheet"] = "inverter_datasheet"


class PVDatasheet(_Datasheet):
    kind: Literal["pv_datasheet"] = "pv_datasheet"


class Tracker(_Entity):
    kind: Literal["tracker"] = "tracker"
    site_id: EntityId
    hardware_id: EntityId
    axis: Literal["single", "dual"] = "single"


class Inverter(_Entity):
    kind: Literal["inverter"] = "inverter"
    site_id: EntityId
    hardware_id: EntityId
    datasheet_id: EntityId


class Battery(_Entity):
    kind: Literal["battery"] = "battery"
    site_id: EntityId
    hardware_id: EntityId
    inverter_id: EntityId


class PVModule(_Entity):
    kind: Literal["pv_module"] = "pv_module"
    site_id: EntityId
    hardware_id: EntityId
    datasheet_id: EntityId
    inverter_id: EntityId
    tracker_id: EntityId | None = None
    tilt: float | None = Field(default=None, ge=0, le=90)
    orientation: float | None = Field(default=None, ge=0, lt=360)

    @model_validator(mode="after")
    def _mounting(self) -> PVModule:
        fixed = self.tilt is not None and self.orientation is not None
        if self.tracker_id is None and not fixed:
            raise ValueError("a module without a tracker needs tilt and orientation")
        if self.tracker_id is not None and (self.tilt is not None or self.orientation is not None):
            raise ValueError("a tracked module takes its angles from the tracker; drop tilt/orientation")
        return self


# Which optional links each sensor category may carry.
CATEGORY_LINKS: dict[SensorCategory, frozenset[str]] = {
    SensorCategory.ELECTRICITY: frozenset({"module_id", "inverter_id", "battery_id"}),
    SensorCategory.PV_TEMPERATURE: frozenset({"module_id"}),
    SensorCategory.IRRADIANCE: frozenset({"tilt", "orientation"}),
    SensorCategory.AMBIENT_TEMPERATURE: frozenset(),
    SensorCategory.WIND_SPEED: frozenset(),
    SensorCategory.WIND_DIRECTION: frozenset(),
    SensorCategory.CLIMATE: frozenset(),
}
_LINK_FIELDS = ("module_id", "inverter_id", "battery_id", "tilt", "orientation")


class SensorDescriptor(_Entity):
    """One row of a per-category sensor table; ``id`` is local to the category."""

    kind: Literal["sensor"] = "sensor"
    category: SensorCategory
    site_id: EntityId
    hardware_id: EntityId | None = None
    unit: str = ""
    module_id: EntityId | None = None
    inverter_id: EntityId | None = None
    battery_id: EntityId | None = None
    tilt: float | None = Field(default=None, ge=0, le=90)
    orientation: float | None = Field(default=None, ge=0, lt=360)
    manufacturer: str = ""
    model: str = ""
    attributes: dict[str, str | float | int | bool] = Field(default_factory=dict)

    @model_validator(mode="after")
    def _category_links(self) -> SensorDescriptor:
        allowed = CATEGORY_LINKS[self.category]
        stray = [f for f in _LINK_FIELDS if getattr(self, f) is not None and f not in allowed]
        if stray:
            raise ValueError(f"{self.category.value} sensors cannot carry {', '.join(stray)}")
        if self.category is SensorCategory.PV_TEMPERATURE and self.module_id is None:
            raise ValueError("pv_temperature sensors must name the module they measure")
        if self.category is SensorCategory.IRRADIANCE and (self.tilt is None or self.orientation is None):
            raise ValueError("irradiance sensors need tilt and orientation")
        return self


class SensorRegistryEntry(BaseModel):
    sensor_id: EntityId
    category: SensorCategory
    category_local_id: EntityId
    registered_at: datetime = Field(default_factory=lambda: datetime.now(timezone.utc))
    deleted: bool = False


CatalogEntity = Annotated[
    Union[
        Operator,
        Site,
        HardwareItem,
        InverterDatasheet,
        PVDatasheet,
        Tracker,
        Inverter,
        Battery,
        PVModule,
        SensorDescriptor,
    ],
    Field(discriminator="kind"),
]

# kind -> document collection
COLLECTIONS: dict[str, str] = {
    "operator": "operators",
    "site": "sites",
    "hardware": "hardware",
    "inverter_datasheet": "inverter_datasheets",
    "pv_datasheet": "pv_datasheets",
    "tracker": "trackers",
    "inverter": "inverters",
    "battery": "batteries",
    "pv_module": "pv_modules",
}


class CatalogDocument(BaseModel):
    """The whole catalog as persisted on disk."""

    model_config = ConfigDict(extra="forbid")

    schema_version: Literal[1] = SCHEMA_VERSION
    next_sensor_id: EntityId = 1
    operators: list[Operator] = Field(default_factory=list)
    sites: list[Site] = Field(default_factory=list)
    hardware: list[HardwareItem] = Field(default_factory=list)
    inverter_datasheets: list[InverterDatasheet] = Field(default_factory=list)
    pv_datasheets: list[PVDatasheet] = Field(default_factory=list)
    trackers: list[Tracker] = Field(default_factory=list)
    inverters: list[Inverter] = Field(default_factory=list)
    batteries: list[Battery] = Field(default_factory=list)
    pv_modules: list[PVModule] = Field(default_factory=list)
    sensor_tables: dict[SensorCategory, list[SensorDescriptor]] = Field(default_factory=dict)
    registry: list[SensorRegistryEntry] = Field(default_factory=list)
