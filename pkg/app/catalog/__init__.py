from app.catalog.models import SensorCategory, SensorDescriptor
from app.catalog.service import Catalog

__all__ = ["Catalog", "SensorCategory", "SensorDescriptor"]
