"""Nearest-available-parking selection.

Candidates are simplified entity documents. A candidate counts as
available when it is an OffStreetParking with availableSpotNumber > 0 or
a ParkingSpot with status "free"; anything else can never be a target.
Every candidate must carry a location: selection is a spatial decision,
and a candidate without coordinates is a data bug worth surfacing even
while it happens to be full or closed.
"""

from __future__ import annotations

from dataclasses import dataclass

from ..errors import InvalidCandidate
from ..geo import GeoPoint, haversine_m

PARKING_TYPE = "OffStreetParking"
SPOT_TYPE = "ParkingSpot"
SPOT_FREE = "free"


@dataclass(frozen=True)
class NearestResult:
    target_id: str
    position: GeoPoint
    distance_m: float


def candidate_position(doc: dict) -> GeoPoint:
    location = doc.get("location")
    if not isinstance(location, dict) or location.get("type") != "Point":
        raise InvalidCandidate(f"candidate {doc.get('id', '?')!r} has no Point location")
    try:
        return GeoPoint.from_coordinates(location.get("coordinates"))
    except Exception as exc:
        raise InvalidCandidate(f"candidate {doc.get('id', '?')!r}: {exc}") from exc


def is_available(doc: dict) -> bool:
    if doc.get("type") == PARKING_TYPE:
        spots = doc.get("availableSpotNumber")
        return isinstance(spots, (int, float)) and not isinstance(spots, bool) and spots > 0
    if doc.get("type") == SPOT_TYPE:
        return doc.get("status") == SPOT_FREE
    return False


def nearest_available(position: GeoPoint, candidates: list[dict]) -> NearestResult | None:
    """Pick the closest available candidate; ties broken by id ascending."""
    best: tuple[float, str, GeoPoint] | None = None
    for doc in candidates:
        target = candidate_position(doc)
        if not is_available(doc):
            continue
        distance = haversine_m(position, target)
        key = (distance, str(doc.get("id", "")))
        if best is None or key < (best[0], best[1]):
            best = (distance, str(doc.get("id", "")), target)
    if best is None:
        return None
    return NearestResult(target_id=best[1], position=best[2], distance_m=best[0])
