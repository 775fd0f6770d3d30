"""Server-sent event relay and web-client gateway.

Browsers never talk to the brokers' subscription machinery directly: the
relay holds in-process subscriptions on both brokers and fans entity
changes out to any number of SSE connections as
``data: {"kind": "entity_change", "entity": {...}}`` frames. It also
serves the city snapshot, forwards RequestParking creations to the urban
broker and device commands to the gateway (so the web client needs a
single origin), and serves the static client bundle under /app.
"""

from __future__ import annotations

import itertools
import json
import mimetypes
import queue
import threading
from pathlib import Path
from typing import Iterator

from .broker import BrokerCore
from .broker.model import entity_from_document, to_simplified
from .errors import InvalidCandidate, InvalidEntity, NotFound
from .twin.nearest import candidate_position
from .httpkit import HttpService, Request, Response, route
from .iot.agent import IotAgent
from .timeutil import utc_now_ms

KEEPALIVE_S = 15.0
CLIENT_QUEUE_MAX = 1000

PLACEHOLDER_PAGE = """<!doctype html>
<html><head><meta charset="utf-8"><title>twinlod</title></head>
<body><p>No client bundle is installed. Build the frontend and point the
stack's app_dir at its dist/ directory.</p></body></html>
"""


class EventRelay:
    def __init__(
        self,
        parking: BrokerCore,
        urban: BrokerCore,
        agent: IotAgent,
        *,
        app_dir: str | Path | None = None,
        name: str = "relay",
        host: str = "127.0.0.1",
        port: int = 0,
    ):
        self.parking = parking
        self.urban = urban
        self.agent = agent
        self.app_dir = Path(app_dir) if app_dir is not None else None
        self._clients: dict[int, queue.Queue] = {}
        self._client_seq = itertools.count()
        self._lock = threading.Lock()
        self.last_event_at: int | None = None
        self.events_out = 0
        self.service = HttpService(
            name,
            [
                route("GET", r"/relay/events", self.events),
                route("GET", r"/relay/snapshot", self.snapshot),
                route("POST", r"/ngsi-ld/v1/entities", self.create_request),
                route("POST", r"/iot/commands", self.send_command),
                route("GET", r"/app(?P<tail>/.*)?", self.app),
            ],
            host=host,
            port=port,
        )

    def attach(self) -> None:
        """Subscribe to both brokers with in-process receivers."""
        parking_uri = self.parking.dispatcher.register_local("relay-parking", self.on_notification)
        self.parking.subscribe("OffStreetParking", endpoint=parking_uri)
        self.parking.subscribe("ParkingSpot", endpoint=parking_uri)
        urban_uri = self.urban.dispatcher.register_local("relay-urban", self.on_notification)
        self.urban.subscribe("ResponseParking", endpoint=urban_uri)

    # --- fan-out ---

    def on_notification(self, payload: dict) -> None:
        for doc in payload.get("data", ()):
            if isinstance(doc, dict):
                self.broadcast({"kind": "entity_change", "entity": doc})

    def broadcast(self, event: dict) -> None:
        frame = f"data: {json.dumps(event, separators=(',', ':'))}\n\n".encode()
        with self._lock:
            self.last_event_at = utc_now_ms()
            self.events_out += 1
            for q in self._clients.values():
                try:
                    q.put_nowait(frame)
                except queue.Full:
                    # A reader this far behind is resynced by its next
                    # snapshot fetch; dropping beats blocking the brokers.
                    pass

    def _register(self) -> tuple[int, queue.Queue]:
        q: queue.Queue = queue.Queue(maxsize=CLIENT_QUEUE_MAX)
        with self._lock:
            client_id = next(self._client_seq)
            self._clients[client_id] = q
        return client_id, q

    def _unregister(self, client_id: int) -> None:
        with self._lock:
            self._clients.pop(client_id, None)

    def connection_count(self) -> int:
        with self._lock:
            return len(self._clients)

    # --- endpoints ---

    def events(self, request: Request) -> Response:
        client_id, q = self._register()

        def stream() -> Iterator[bytes]:
            try:
                yield b"retry: 1000\n\n"
                while True:
                    try:
                        yield q.get(timeout=KEEPALIVE_S)
                    except queue.Empty:
                        yield b": keep-alive\n\n"
            finally:
                self._unregister(client_id)

        return Response(200, stream=stream(), content_type="text/event-stream")

    def snapshot(self, request: Request) -> Response:
        spots = [
            {
                "id": doc["id"],
                "position": doc.get("location", {}).get("coordinates"),
                "status": doc.get("status"),
            }
            for doc in self._simplified("ParkingSpot")
        ]
        parkings = [
            {
                "id": doc["id"],
                "position": doc.get("location", {}).get("coordinates"),
                "availableSpotNumber": doc.get("availableSpotNumber"),
            }
            for doc in self._simplified("OffStreetParking")
        ]
        return Response(
            200,
            {"spots": spots, "parkings": parkings, "last_event_at": self.last_event_at},
        )

    def _simplified(self, entity_type: str) -> list[dict]:
        return [to_simplified(e) for e in self.parking.query_entities(type_filter=entity_type)]

    def create_request(self, request: Request) -> Response:
        doc = request.json()
        if not isinstance(doc, dict) or doc.get("type") != "RequestParking":
            raise InvalidEntity("the relay only forwards RequestParking creations")
        try:
            candidate_position(doc)
        except InvalidCandidate as exc:
            raise InvalidEntity(f"a parking request needs a usable Point location: {exc}") from exc
        entity_id = self.urban.create_entity(entity_from_document(doc))
        return Response(201, {"id": entity_id}, headers={"Location": f"/ngsi-ld/v1/entities/{entity_id}"})

    def send_command(self, request: Request) -> Response:
        body = request.json() or {}
        payload = self.agent.send_command(body.get("entityId", ""), body.get("command", ""))
        return Response(200, {"payload": payload})

    def app(self, request: Request, tail: str | None = None) -> Response:
        rel = (tail or "/").lstrip("/") or "index.html"
        if self.app_dir is None:
            if rel == "index.html":
                return Response(200, PLACEHOLDER_PAGE, content_type="text/html; charset=utf-8")
            raise NotFound(f"no client bundle installed ({rel})")
        base = self.app_dir.resolve()
        target = (base / rel).resolve()
        if base not in target.parents and target != base:
            raise NotFound(rel)
        if not target.is_file():
            raise NotFound(rel)
        content_type = mimetypes.guess_type(target.name)[0] or "application/octet-stream"
        return Response(200, target.read_bytes(), content_type=content_type)
