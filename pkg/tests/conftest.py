"""
Shared fixtures: temporary store / staging / catalog, a catalog graph
mirroring the reference installation (one operator, two sites, one sensor per
category), and a cached synthetic PAR day.
"""

from __future__ import annotations

from datetime import date, datetime, timezone

import numpy as np
import pytest

from app.catalog.models import (
    Battery,
    HardwareItem,
    Inverter,
    InverterDatasheet,
    Operator,
    PVDatasheet,
    PVModule,
    SensorCategory,
    SensorDescriptor,
    Site,
    Tracker,
)
from app.catalog.service import Catalog
from app.core.synth import generate_par
from app.db.staging import StagingStore
from app.schemas import SynthSpec, TimeSeries
from app.store.engine import SegmentStore

FIXED_NOW = datetime(2030, 1, 1, 12, 0, tzinfo=timezone.utc)


def fixed_clock() -> datetime:
    return FIXED_NOW


def make_series(timestamps, values, sensor: int = 0, gaps=()) -> TimeSeries:
    return TimeSeries(
        sensor=sensor,
        timestamps=np.asarray(timestamps, dtype=np.int64),
        values=np.asarray(values, dtype=np.float64),
        gaps=tuple(gaps),
    )


@pytest.fixture
def store(tmp_path):
    """Empty segment store whose clock sits well after any test data."""
    s = SegmentStore(tmp_path / "store", clock=fixed_clock)
    yield s
    s.close()


@pytest.fixture
def staging(tmp_path):
    s = StagingStore(tmp_path / "staging.db")
    yield s
    s.close()


@pytest.fixture
def catalog(tmp_path):
    return Catalog(tmp_path / "catalog.json", clock=fixed_clock)


@pytest.fixture
def plant_catalog(catalog):
    """Operator -> 2 sites; site 1 holds inverter, module, battery, tracker and
    one sensor of every category. Returns (catalog, ids)."""
    ids: dict[str, int] = {}
    ids["operator"] = catalog.upsert_entity(Operator(name="Solar Lab", contact="lab@example.org"))
    ids["site1"] = catalog.upsert_entity(
        Site(operator_id=ids["operator"], name="Roof A", latitude=35.14, longitude=33.38, elevation=160)
    )
    ids["site2"] = catalog.upsert_entity(
        Site(operator_id=ids["operator"], name="Field B", latitude=35.20, longitude=33.40, elevation=210)
    )
    hw = {}
    for name in ("inverter", "module", "battery", "tracker", "tracker2", "sensors"):
        hw[name] = catalog.upsert_entity(HardwareItem(serial_number=f"SN-{name}", description=name))
    ids.update({f"hw_{k}": v for k, v in hw.items()})
    ids["inv_ds"] = catalog.upsert_entity(InverterDatasheet(manufacturer="Inv Co", model="X5"))
    ids["pv_ds"] = catalog.upsert_entity(PVDatasheet(manufacturer="PV Co", model="M400"))
    ids["inverter"] = catalog.upsert_entity(
        Inverter(site_id=ids["site1"], hardware_id=hw["inverter"], datasheet_id=ids["inv_ds"])
    )
    ids["tracker"] = catalog.upsert_entity(Tracker(site_id=ids["site1"], hardware_id=hw["tracker"]))
    ids["tracker_site2"] = catalog.upsert_entity(Tracker(site_id=ids["site2"], hardware_id=hw["tracker2"]))
    ids["module"] = catalog.upsert_entity(
        PVModule(
            site_id=ids["site1"],
            hardware_id=hw["module"],
            datasheet_id=ids["pv_ds"],
            inverter_id=ids["inverter"],
            tilt=30,
            orientation=180,
        )
    )
    ids["battery"] = catalog.upsert_entity(
        Battery(site_id=ids["site1"], hardware_id=hw["battery"], inverter_id=ids["inverter"])
    )

    site = ids["site1"]
    descriptors = {
        "electricity": SensorDescriptor(category=SensorCategory.ELECTRICITY, site_id=site, module_id=ids["module"], unit="W"),
        "pv_temperature": SensorDescriptor(category=SensorCategory.PV_TEMPERATURE, site_id=site, module_id=ids["module"], unit="C"),
        "irradiance": SensorDescriptor(
            category=SensorCategory.IRRADIANCE, site_id=site, tilt=0, orientation=0, unit="umol/m2/s",
            manufacturer="Apogee", model="SP-214",
        ),
        "ambient_temperature": SensorDescriptor(category=SensorCategory.AMBIENT_TEMPERATURE, site_id=site, unit="C"),
        "wind_speed": SensorDescriptor(category=SensorCategory.WIND_SPEED, site_id=site, unit="m/s"),
        "wind_direction": SensorDescriptor(category=SensorCategory.WIND_DIRECTION, site_id=site, unit="deg"),
        "climate": SensorDescriptor(category=SensorCategory.CLIMATE, site_id=site, unit="%RH"),
    }
    for name, desc in descriptors.items():
        ids[f"sensor_{name}"] = catalog.register_sensor(desc)
    return catalog, ids


@pytest.fixture(scope="session")
def par_day() -> TimeSeries:
    """One synthetic PAR day: 86 400 samples, peak 2000, 6 clouds/h, noise on [1, 6]."""
    return generate_par(SynthSpec(days=1, start_day=date(2024, 6, 1), seed=7))
