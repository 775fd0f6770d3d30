"""Geographic points and great-circle distance.

Coordinates are carried as (latitude, longitude) degree pairs, which is
also the on-wire array ordering used by every entity document in this
stack (``coordinates: [lat, lon]``).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from .errors import InvalidEntity

EARTH_RADIUS_M = 6_371_000.0


@dataclass(frozen=True)
class GeoPoint:
    lat: float
    lon: float

    def __post_init__(self):
        if not (isinstance(self.lat, (int, float)) and isinstance(self.lon, (int, float))):
            raise InvalidEntity(f"coordinates must be numeric, got ({self.lat!r}, {self.lon!r})")
        if math.isnan(self.lat) or math.isnan(self.lon):
            raise InvalidEntity("coordinates must not be NaN")
        if not -90.0 <= self.lat <= 90.0:
            raise InvalidEntity(f"latitude {self.lat} outside [-90, 90]")
        if not -180.0 <= self.lon <= 180.0:
            raise InvalidEntity(f"longitude {self.lon} outside [-180, 180]")

    def as_coordinates(self) -> list[float]:
        return [self.lat, self.lon]

    @classmethod
    def from_coordinates(cls, pair) -> "GeoPoint":
        if not isinstance(pair, (list, tuple)) or len(pair) != 2:
            raise InvalidEntity(f"coordinates must be a [lat, lon] pair, got {pair!r}")
        return cls(float(pair[0]), float(pair[1]))


def haversine_m(a: GeoPoint, b: GeoPoint) -> float:
    """Great-circle distance in meters on a sphere of radius 6371 km."""
    lat1, lon1 = math.radians(a.lat), math.radians(a.lon)
    lat2, lon2 = math.radians(b.lat), math.radians(b.lon)
    dlat = lat2 - lat1
    dlon = lon2 - lon1
    h = math.sin(dlat / 2.0) ** 2 + math.cos(lat1) * math.cos(lat2) * math.sin(dlon / 2.0) ** 2
    return 2.0 * EARTH_RADIUS_M * math.asin(math.sqrt(h))
