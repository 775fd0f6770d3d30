"""Event relay: SSE fan-out, city snapshot, forwarding, static serving.

The relay is the single origin a browser talks to, so these tests
exercise it over real HTTP: a live server, real EventSource-style
streaming reads, and both brokers behind it.
"""

from __future__ import annotations

import http.client
import json
import queue
import socket
import threading
from urllib.parse import urlparse

import pytest
import requests

from twinlod.broker.core import BrokerCore
from twinlod.broker.dispatch import NotificationDispatcher
from twinlod.broker.model import entity_from_document
from twinlod.iot.agent import DeviceRegistration, IotAgent
from twinlod.relay import EventRelay


@pytest.fixture()
def rig(tmp_path):
    parking = BrokerCore(dispatcher=NotificationDispatcher())
    urban = BrokerCore(dispatcher=NotificationDispatcher())
    agent = IotAgent(broker=parking)
    app_dir = tmp_path / "app"
    app_dir.mkdir()
    (app_dir / "index.html").write_text("<!doctype html><p>city map</p>", "utf-8")
    (app_dir / "bundle.js").write_text("console.log('x')", "utf-8")
    relay = EventRelay(parking, urban, agent, app_dir=app_dir)
    relay.attach()
    relay.service.start()
    yield parking, urban, agent, relay
    relay.service.stop()
    parking.dispatcher.stop()
    urban.dispatcher.stop()


def create(core: BrokerCore, doc: dict) -> str:
    return core.create_entity(entity_from_document(doc))


def spot(suffix: str, status: str = "free", coordinates=(40.33, -3.75)) -> dict:
    return {
        "id": f"urn:ngsi-ld:ParkingSpot:{suffix}",
        "type": "ParkingSpot",
        "location": {"type": "Point", "coordinates": list(coordinates)},
        "status": status,
    }


def parking_lot(suffix: str, available: int, coordinates=(40.34, -3.76)) -> dict:
    return {
        "id": f"urn:ngsi-ld:OffStreetParking:{suffix}",
        "type": "OffStreetParking",
        "location": {"type": "Point", "coordinates": list(coordinates)},
        "availableSpotNumber": available,
    }


class SseReader:
    """Minimal EventSource stand-in over http.client.

    requests/urllib3 cannot abandon an open never-ending stream without
    draining it (close blocks for the whole read timeout), so this reads
    lines straight off the socket and interrupts them with shutdown().
    """

    def __init__(self, url: str):
        parsed = urlparse(url)
        self.conn = http.client.HTTPConnection(parsed.hostname, parsed.port, timeout=30)
        self.conn.request("GET", parsed.path)
        self.resp = self.conn.getresponse()
        assert self.resp.status == 200
        assert self.resp.headers["Content-Type"].startswith("text/event-stream")
        # http.client hands the socket to the response for read-to-EOF
        # bodies; keep a handle so close() can interrupt a blocked read
        self._sock = self.conn.sock or self.resp.fp.raw._sock
        self.frames: queue.Queue = queue.Queue()
        self._thread = threading.Thread(target=self._read, daemon=True)
        self._thread.start()

    def _read(self):
        try:
            while True:
                line = self.resp.fp.readline()
                if not line:
                    return
                text = line.decode("utf-8").rstrip("\n")
                if text.startswith("data: "):
                    self.frames.put(json.loads(text[len("data: "):]))
        except (OSError, ValueError):
            pass

    def next_frame(self, timeout: float = 10.0) -> dict:
        return self.frames.get(timeout=timeout)

    def close(self):
        try:
            self._sock.shutdown(socket.SHUT_RDWR)
        except OSError:
            pass
        self.conn.close()


class TestEventsStream:
    def test_entity_changes_reach_the_stream(self, rig):
        parking, urban, agent, relay = rig
        reader = SseReader(relay.service.url + "/relay/events")
        try:
            create(parking, spot("1", "free"))
            frame = reader.next_frame()
            assert frame["kind"] == "entity_change"
            assert frame["entity"]["id"] == "urn:ngsi-ld:ParkingSpot:1"
            assert frame["entity"]["status"] == "free"
        finally:
            reader.close()

    def test_urban_responses_are_streamed_too(self, rig):
        parking, urban, agent, relay = rig
        reader = SseReader(relay.service.url + "/relay/events")
        try:
            create(
                urban,
                {
                    "id": "urn:ngsi-ld:ResponseParking:9",
                    "type": "ResponseParking",
                    "requestRef": "urn:ngsi-ld:RequestParking:9",
                    "noneAvailable": False,
                },
            )
            frame = reader.next_frame()
            assert frame["entity"]["type"] == "ResponseParking"
        finally:
            reader.close()

    def test_two_subscribers_both_see_every_event(self, rig):
        parking, urban, agent, relay = rig
        readers = [SseReader(relay.service.url + "/relay/events") for _ in range(2)]
        try:
            create(parking, spot("a", "occupied"))
            create(parking, spot("b", "free"))
            for reader in readers:
                ids = {reader.next_frame()["entity"]["id"], reader.next_frame()["entity"]["id"]}
                assert ids == {"urn:ngsi-ld:ParkingSpot:a", "urn:ngsi-ld:ParkingSpot:b"}
        finally:
            for reader in readers:
                reader.close()

    def test_disconnected_client_is_unregistered(self, rig):
        parking, urban, agent, relay = rig
        reader = SseReader(relay.service.url + "/relay/events")
        create(parking, spot("1"))
        reader.next_frame()
        assert relay.connection_count() == 1
        reader.close()
        # the server notices on its next write; force a few events through
        deadline_events = 0
        while relay.connection_count() > 0 and deadline_events < 100:
            parking.update_attributes(
                "urn:ngsi-ld:ParkingSpot:1",
                entity_from_document(spot("1", "occupied")).attributes,
            )
            parking.dispatcher.wait_idle(5.0)
            deadline_events += 1
        assert relay.connection_count() == 0


class TestSnapshot:
    def test_snapshot_reflects_current_city_state(self, rig):
        parking, urban, agent, relay = rig
        create(parking, spot("1", "free", (40.30, -3.70)))
        create(parking, spot("2", "closed", (40.31, -3.71)))
        create(parking, parking_lot("1", 132, (40.32, -3.72)))
        parking.dispatcher.wait_idle(5.0)

        snap = requests.get(relay.service.url + "/relay/snapshot", timeout=5).json()
        spots = {s["id"]: s for s in snap["spots"]}
        assert spots["urn:ngsi-ld:ParkingSpot:1"]["status"] == "free"
        assert spots["urn:ngsi-ld:ParkingSpot:2"]["position"] == [40.31, -3.71]
        assert snap["parkings"] == [
            {
                "id": "urn:ngsi-ld:OffStreetParking:1",
                "position": [40.32, -3.72],
                "availableSpotNumber": 132,
            }
        ]
        assert isinstance(snap["last_event_at"], int)

    def test_snapshot_on_empty_city(self, rig):
        parking, urban, agent, relay = rig
        snap = requests.get(relay.service.url + "/relay/snapshot", timeout=5).json()
        assert snap == {"spots": [], "parkings": [], "last_event_at": None}


class TestForwarding:
    def test_request_creation_lands_in_the_urban_broker(self, rig):
        parking, urban, agent, relay = rig
        doc = {
            "id": "urn:ngsi-ld:RequestParking:web1",
            "type": "RequestParking",
            "location": {"type": "Point", "coordinates": [40.33, -3.75]},
        }
        resp = requests.post(relay.service.url + "/ngsi-ld/v1/entities", json=doc, timeout=5)
        assert resp.status_code == 201
        assert resp.json() == {"id": "urn:ngsi-ld:RequestParking:web1"}
        assert urban.has_entity("urn:ngsi-ld:RequestParking:web1")
        assert not parking.has_entity("urn:ngsi-ld:RequestParking:web1")

    def test_non_request_creation_is_rejected(self, rig):
        parking, urban, agent, relay = rig
        resp = requests.post(
            relay.service.url + "/ngsi-ld/v1/entities", json=spot("evil"), timeout=5
        )
        assert resp.status_code == 400
        assert not urban.has_entity("urn:ngsi-ld:ParkingSpot:evil")

    @pytest.mark.parametrize(
        "location",
        [None, "nowhere", {"type": "Point"}, {"type": "Point", "coordinates": [120.0, 0.0]}],
    )
    def test_request_without_usable_position_is_rejected_at_the_edge(self, rig, location):
        parking, urban, agent, relay = rig
        doc = {"id": "urn:ngsi-ld:RequestParking:lost", "type": "RequestParking"}
        if location is not None:
            doc["location"] = location
        resp = requests.post(relay.service.url + "/ngsi-ld/v1/entities", json=doc, timeout=5)
        assert resp.status_code == 400
        assert "location" in resp.json()["detail"]
        assert not urban.has_entity("urn:ngsi-ld:RequestParking:lost")

    def test_command_reaches_the_device_and_the_twin(self, rig):
        parking, urban, agent, relay = rig
        create(parking, spot("123", "closed"))
        agent.register_device(
            DeviceRegistration(
                device_id="spot-123",
                entity_id="urn:ngsi-ld:ParkingSpot:123",
                entity_type="ParkingSpot",
                attribute_map={"s": "status"},
                command_map={"open": "open"},
            )
        )
        resp = requests.post(
            relay.service.url + "/iot/commands",
            json={"entityId": "urn:ngsi-ld:ParkingSpot:123", "command": "open"},
            timeout=5,
        )
        assert resp.status_code == 200
        assert "open" in resp.json()["payload"]
        # simulate the device acknowledging the actuation
        agent.ingest("spot-123|s|free")
        parking.dispatcher.wait_idle(5.0)
        doc = parking.get_entity("urn:ngsi-ld:ParkingSpot:123", representation="simplified")
        assert doc["status"] == "free"


class TestStaticBundle:
    def test_index_and_assets_are_served(self, rig):
        parking, urban, agent, relay = rig
        index = requests.get(relay.service.url + "/app", timeout=5)
        assert index.status_code == 200
        assert "city map" in index.text
        assert "text/html" in index.headers["Content-Type"]
        js = requests.get(relay.service.url + "/app/bundle.js", timeout=5)
        assert js.status_code == 200
        assert "javascript" in js.headers["Content-Type"]

    def test_missing_asset_is_404(self, rig):
        parking, urban, agent, relay = rig
        assert requests.get(relay.service.url + "/app/nope.css", timeout=5).status_code == 404

    def test_path_traversal_is_blocked(self, rig):
        parking, urban, agent, relay = rig
        resp = requests.get(
            relay.service.url + "/app/%2e%2e/%2e%2e/etc/passwd", timeout=5
        )
        assert resp.status_code == 404

    def test_placeholder_page_without_bundle(self, rig):
        parking, urban, agent, relay = rig
        bare = EventRelay(parking, urban, agent)
        bare.service.start()
        try:
            resp = requests.get(bare.service.url + "/app", timeout=5)
            assert resp.status_code == 200
            assert "No client bundle" in resp.text
        finally:
            bare.service.stop()
