"""Shared helpers: reference documents, stack config trees, port allocation."""

from __future__ import annotations

import itertools
import json
import socket
import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from pathlib import Path
from types import SimpleNamespace

import pytest

from twinlod.broker import BrokerCore, NotificationDispatcher

CONFIGS = Path(__file__).parent.parent / "configs"
DATA = Path(__file__).parent / "data"


def load_doc(name: str) -> dict:
    """A fresh copy of a reference document from tests/data."""
    return json.loads((DATA / name).read_text("utf-8"))


@pytest.fixture()
def dispatcher():
    d = NotificationDispatcher(base_delay_s=0.001)
    yield d
    d.stop()


@pytest.fixture()
def broker(dispatcher):
    return BrokerCore(dispatcher=dispatcher)


@pytest.fixture()
def offstreet_doc():
    return load_doc("offstreetparking_1.json")


@pytest.fixture()
def spot_doc():
    return load_doc("parkingspot_123.json")


@pytest.fixture()
def request_doc():
    return load_doc("requestparking_12345.json")


@pytest.fixture()
def collector_factory(dispatcher):
    """In-process notification collectors: (fail_first=N) -> (collector, uri).

    The receiver raises on its first `fail_first` attempts, driving the
    dispatcher's retry path; successful deliveries land in `received`.
    """
    counter = itertools.count()

    def make(fail_first: int = 0):
        collector = SimpleNamespace(received=[], attempts=0)

        def receive(payload: dict) -> None:
            collector.attempts += 1
            if collector.attempts <= fail_first:
                raise RuntimeError("transient receiver failure")
            collector.received.append(payload)

        uri = dispatcher.register_local(f"collector-{next(counter)}", receive)
        return collector, uri

    return make


@pytest.fixture()
def http_receiver():
    """A webhook endpoint over real HTTP; `fail_first` forces N 503 responses."""

    class Receiver:
        def __init__(self):
            self.received: list[dict] = []
            self.fail_first = 0
            self.attempts = 0
            self.endpoint = ""

    state = Receiver()

    class Handler(BaseHTTPRequestHandler):
        protocol_version = "HTTP/1.1"
        disable_nagle_algorithm = True

        def do_POST(self):
            length = int(self.headers.get("Content-Length") or 0)
            body = self.rfile.read(length)
            state.attempts += 1
            if state.attempts <= state.fail_first:
                self.send_response(503)
                self.send_header("Content-Length", "0")
                self.end_headers()
                return
            state.received.append(json.loads(body))
            self.send_response(204)
            self.send_header("Content-Length", "0")
            self.end_headers()

        def log_message(self, *args):
            pass

    server = ThreadingHTTPServer(("127.0.0.1", 0), Handler)
    server.daemon_threads = True
    state.endpoint = f"http://127.0.0.1:{server.server_address[1]}/notify"
    thread = threading.Thread(
        target=lambda: server.serve_forever(poll_interval=0.02), daemon=True
    )
    thread.start()
    yield state
    server.shutdown()
    server.server_close()

PORT_KEYS = (
    "access_port",
    "broker_parking_port",
    "broker_urban_port",
    "odp_port",
    "iot_agent_port",
    "relay_port",
)


def config_tree(tmp_path: Path, **overrides) -> Path:
    """A copy of the shipped config tree, ephemeral ports, data in tmp."""
    tmp_path.mkdir(parents=True, exist_ok=True)
    for name in (
        "clients.json",
        "policies.json",
        "models.json",
        "graph_publication.json",
        "scenario_demo.json",
    ):
        (tmp_path / name).write_text((CONFIGS / name).read_text("utf-8"), "utf-8")
    doc = json.loads((CONFIGS / "stack.json").read_text("utf-8"))
    doc.update(
        {name: 0 for name in PORT_KEYS},
        scenario_path="scenario_demo.json",
        data_dir="data",
    )
    doc.update(overrides)
    path = tmp_path / "stack.json"
    path.write_text(json.dumps(doc), "utf-8")
    return path


def free_port() -> int:
    with socket.socket() as s:
        s.bind(("127.0.0.1", 0))
        return s.getsockname()[1]


def fixed_ports() -> dict[str, int]:
    return {name: free_port() for name in PORT_KEYS}
