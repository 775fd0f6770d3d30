"""Seeded occupancy simulation for the parking twin.

The simulator is the single logical writer for the entities it drives:
it keeps an internal mirror of parking counts and spot statuses, so a
fixed seed yields an identical write sequence regardless of what the
rest of the stack does with the updates. Parking occupancy performs a
bounded walk in [0, capacity] (the patch is issued even when the clamp
keeps the value, exercising update-notifies-even-if-equal semantics);
spot statuses flip between free and occupied through the device gateway
when one is attached, and never leave "closed" on their own - only
actuation commands reopen a closed spot.

Every write is recorded in a trace (step, entity id, attribute, value),
which is the counting oracle for downstream row counts.
"""

from __future__ import annotations

import random
from dataclasses import dataclass
from typing import Protocol

from ..errors import InvalidConfig
from ..iot.agent import IotAgent

AVAILABLE_ATTR = "availableSpotNumber"
STATUS_ATTR = "status"
STATUS_FREE = "free"
STATUS_OCCUPIED = "occupied"
STATUS_CLOSED = "closed"


class EntityWriter(Protocol):
    """Minimal broker surface the simulator writes through."""

    def patch_attributes(self, entity_id: str, attrs: dict) -> None: ...


@dataclass
class SimParking:
    entity_id: str
    available: int
    capacity: int


@dataclass
class SimSpot:
    entity_id: str
    status: str
    device_id: str | None = None


class OccupancySimulator:
    def __init__(
        self,
        broker: EntityWriter,
        parkings: list[SimParking],
        spots: list[SimSpot],
        *,
        rng_seed: int,
        arrival_rate_per_min: float,
        departure_rate_per_min: float,
        agent: IotAgent | None = None,
    ):
        if arrival_rate_per_min < 0 or departure_rate_per_min < 0:
            raise InvalidConfig("occupancy rates must be non-negative")
        if arrival_rate_per_min + departure_rate_per_min <= 0:
            raise InvalidConfig("at least one occupancy rate must be positive")
        self.broker = broker
        self.agent = agent
        self.parkings = list(parkings)
        self.spots = list(spots)
        self.rng = random.Random(rng_seed)
        self.arrival_rate = arrival_rate_per_min
        self.departure_rate = departure_rate_per_min
        self.trace: list[dict] = []
        self._step = 0

    # One simulation step models one minute of city time.
    @property
    def _p_arrival(self) -> float:
        return self.arrival_rate / (self.arrival_rate + self.departure_rate)

    def prime(self) -> list[dict]:
        """Re-touch every entity so downstream pipelines see current state."""
        events = []
        for p in self.parkings:
            events.append(self._write_parking(p, p.available))
        for s in self.spots:
            events.append(self._write_spot(s, s.status))
        self.trace.extend(events)
        return events

    def step(self) -> list[dict]:
        """Advance one step; returns the trace events it produced.

        The random stream is consumed identically on every path (all
        draws happen before any branch), keeping trajectories aligned
        across runs even when clamping or closed spots suppress writes.
        """
        self._step += 1
        events: list[dict] = []
        parking_idx = self.rng.randrange(len(self.parkings)) if self.parkings else -1
        parking_u = self.rng.random()
        spot_idx = self.rng.randrange(len(self.spots)) if self.spots else -1
        spot_u = self.rng.random()

        if parking_idx >= 0:
            p = self.parkings[parking_idx]
            delta = -1 if parking_u < self._p_arrival else 1
            value = min(max(p.available + delta, 0), p.capacity)
            events.append(self._write_parking(p, value))

        if spot_idx >= 0:
            s = self.spots[spot_idx]
            flipped = None
            if s.status == STATUS_FREE and spot_u < min(self.arrival_rate / 60.0, 1.0):
                flipped = STATUS_OCCUPIED
            elif s.status == STATUS_OCCUPIED and spot_u < min(self.departure_rate / 60.0, 1.0):
                flipped = STATUS_FREE
            if flipped is not None:
                events.append(self._write_spot(s, flipped))

        self.trace.extend(events)
        return events

    def run(self, steps: int) -> list[dict]:
        if steps < 0:
            raise InvalidConfig("steps must be non-negative")
        for _ in range(steps):
            self.step()
        return list(self.trace)

    def set_status(self, entity_id: str, status: str) -> None:
        """Sync the mirror after an external write (e.g. actuation)."""
        for s in self.spots:
            if s.entity_id == entity_id:
                s.status = status
                return

    def availability_fraction(self) -> float:
        """Free spots over all spots; closed spots count as unavailable."""
        if not self.spots:
            return 1.0
        free = sum(1 for s in self.spots if s.status == STATUS_FREE)
        return free / len(self.spots)

    def _write_parking(self, p: SimParking, value: int) -> dict:
        p.available = value
        self.broker.patch_attributes(p.entity_id, {AVAILABLE_ATTR: value})
        return {"step": self._step, "entity_id": p.entity_id, "attribute": AVAILABLE_ATTR, "value": value}

    def _write_spot(self, s: SimSpot, status: str) -> dict:
        s.status = status
        if self.agent is not None and s.device_id is not None:
            self.agent.ingest(f"{s.device_id}|s|{status}")
        else:
            self.broker.patch_attributes(s.entity_id, {STATUS_ATTR: status})
        return {"step": self._step, "entity_id": s.entity_id, "attribute": STATUS_ATTR, "value": status}
