"""RequestParking to ResponseParking processing for the urban twin.

The processor subscribes to RequestParking entities on the urban broker
(in-process endpoint, so it shares the broker's process), selects the
nearest available target among the broker's current OffStreetParking and
ParkingSpot entities, and writes a ResponseParking entity whose URN
mirrors the request suffix.

Each request id is handled exactly once: notification delivery is
at-least-once, so replays reach the processor and are dropped against
the handled-id set. Requests are processed one at a time; the observed
candidate snapshot of every decision is kept in an operation log so
invariant checks can replay decisions offline.

Candidates without a usable Point location never reach the selection:
they are partitioned out, named in the log entry's ``malformed`` list,
and warned about, so one coordinate-less twin cannot wedge request
processing for the whole city while the data bug stays visible.
"""

from __future__ import annotations

import json
import logging
import threading
from pathlib import Path
from typing import Callable

from ..broker import BrokerCore
from ..broker.model import attributes_from_patch, entity_from_document, parse_urn, to_simplified
from ..errors import InvalidCandidate, StorageFailure
from ..geo import GeoPoint
from ..timeutil import format_ms, parse_ms, utc_now_ms
from .nearest import PARKING_TYPE, SPOT_TYPE, candidate_position, is_available, nearest_available

log = logging.getLogger("twinlod.twin.processor")

REQUEST_TYPE = "RequestParking"
RESPONSE_TYPE = "ResponseParking"


def response_id_for(request_id: str) -> str:
    _, suffix = parse_urn(request_id)
    return f"urn:ngsi-ld:{RESPONSE_TYPE}:{suffix}"


class RequestProcessor:
    def __init__(
        self,
        urban: BrokerCore,
        *,
        max_data_age_ms: int = 60_000,
        clock: Callable[[], int] = utc_now_ms,
        log_path: str | Path | None = None,
        name: str = "request-processor",
    ):
        self.urban = urban
        self.max_data_age_ms = max_data_age_ms
        self.clock = clock
        self.log_path = Path(log_path) if log_path is not None else None
        self.name = name
        self.log: list[dict] = []
        self._handled: set[str] = set()
        self._offstreet_fresh_at: int | None = None
        self._lock = threading.Lock()
        self.subscription_id: str | None = None

    def attach(self) -> str:
        """Register the notification receiver and subscribe to requests."""
        uri = self.urban.dispatcher.register_local(self.name, self.on_notification)
        self.subscription_id = self.urban.subscribe(REQUEST_TYPE, endpoint=uri)
        return self.subscription_id

    def note_offstreet_refresh(self, at_ms: int | None = None) -> None:
        """Record that off-street data was just fetched/republished."""
        with self._lock:
            self._offstreet_fresh_at = self.clock() if at_ms is None else at_ms

    def on_notification(self, payload: dict) -> None:
        for doc in payload.get("data", ()):
            if isinstance(doc, dict) and doc.get("type") == REQUEST_TYPE:
                self.handle_request(doc)

    def handle_request(self, request_doc: dict) -> dict | None:
        """Answer one request; returns the response document (None on replay)."""
        request_id = str(request_doc.get("id", ""))
        with self._lock:
            if request_id in self._handled:
                return None
            self._handled.add(request_id)
            fresh_at = self._offstreet_fresh_at
            return self._decide(request_doc, request_id, fresh_at)

    def _decide(self, request_doc: dict, request_id: str, fresh_at: int | None) -> dict | None:
        now = self.clock()
        try:
            position = candidate_position(request_doc)
        except InvalidCandidate as exc:
            log.warning("%s: dropping unanswerable request %s: %s", self.name, request_id, exc)
            return None
        candidates: list[dict] = []
        malformed: list[str] = []
        for doc in (
            to_simplified(e)
            for t in (PARKING_TYPE, SPOT_TYPE)
            for e in self.urban.query_entities(type_filter=t)
        ):
            try:
                candidate_position(doc)
            except InvalidCandidate:
                malformed.append(str(doc.get("id", "?")))
            else:
                candidates.append(doc)
        if malformed:
            log.warning(
                "%s: skipping %d candidate(s) without usable coordinates: %s",
                self.name,
                len(malformed),
                ", ".join(malformed),
            )
        result = nearest_available(position, candidates)

        offstreet_present = any(c.get("type") == PARKING_TYPE for c in candidates)
        data_age_ms = None if fresh_at is None else now - fresh_at
        if offstreet_present:
            stale = data_age_ms is None or data_age_ms > self.max_data_age_ms
        else:
            stale = False

        response_id = response_id_for(request_id)
        response = {
            "id": response_id,
            "type": RESPONSE_TYPE,
            "requestRef": request_id,
            "decidedAt": format_ms(now),
            "noneAvailable": result is None,
            "stale": stale,
        }
        if result is not None:
            response["targetRef"] = result.target_id
            response["location"] = {"type": "Point", "coordinates": result.position.as_coordinates()}
            response["distanceM"] = result.distance_m
        self._write_response(response)

        entry = {
            "at": now,
            "request_id": request_id,
            "response_id": response_id,
            "position": position.as_coordinates(),
            "target": result.target_id if result is not None else None,
            "distance_m": result.distance_m if result is not None else None,
            "stale": stale,
            "data_age_ms": data_age_ms,
            "latency_ms": self._request_latency_ms(request_doc, now),
            "malformed": malformed,
            "observed": [
                {
                    "id": c.get("id"),
                    "type": c.get("type"),
                    "available": is_available(c),
                    "coordinates": candidate_position(c).as_coordinates(),
                }
                for c in candidates
            ],
        }
        self.log.append(entry)
        self._append_log_line(entry)
        return response

    def _write_response(self, response: dict) -> None:
        if self.urban.has_entity(response["id"]):
            patch = {k: v for k, v in response.items() if k not in ("id", "type")}
            self.urban.update_attributes(response["id"], attributes_from_patch(patch))
        else:
            self.urban.create_entity(entity_from_document(response))

    @staticmethod
    def _request_latency_ms(request_doc: dict, now: int) -> int | None:
        created = request_doc.get("createdAt")
        if not isinstance(created, str):
            return None
        try:
            return now - parse_ms(created)
        except ValueError:
            return None

    def _append_log_line(self, entry: dict) -> None:
        if self.log_path is None:
            return
        try:
            with self.log_path.open("a", encoding="utf-8") as fh:
                fh.write(json.dumps(entry, sort_keys=True) + "\n")
        except OSError as exc:
            raise StorageFailure(f"cannot append operation log {self.log_path}: {exc}") from exc
