from app.store.engine import SegmentStore
from app.store.segment import Segment

__all__ = ["Segment", "SegmentStore"]
