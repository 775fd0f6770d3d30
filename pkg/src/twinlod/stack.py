"""Single-process supervisor for the whole service stack.

`Stack.start()` brings up six HTTP services in dependency order — the
parking-twin broker, the urban-twin broker, the open-data portal, the
device gateway, the access gateway (token endpoint + authorizing proxy
in front of the parking broker), and the event relay — probing each
/health before moving on. Failure at any point tears down everything
already started, so a bad config never leaves half a stack running.

With `wire_pipelines=True` (the default, used by `serve`) the stack also
runs its standing dataflows: the publication graph that turns parking
notifications into portal datasets, a live spot mirror into the urban
broker, a request processor answering RequestParking entities, and a
periodic harvest that re-reads the published datasets into the urban
broker the way any open-data consumer would. The scenario runner passes
`wire_pipelines=False` and wires its own copies so a run stays
deterministic and nothing is counted twice.

State lives in memory and is rebuilt on every start, which makes
stop+start a clean restart. `bundle()` exposes the running services as
the handle set the scenario runner drives.
"""

from __future__ import annotations

import json
import logging
import threading
import time
from pathlib import Path
from typing import Any

import requests

from .access.core import AccessControl, clients_from_json, policies_from_json
from .access.http import AccessHttp
from .broker.core import BrokerCore
from .broker.dispatch import NotificationDispatcher
from .broker.http import BrokerHttp
from .broker.model import attributes_from_patch, entity_from_document
from .clients import AuthClient, BrokerClient, PortalClient
from .config import StackConfig
from .errors import ConfigError, ServiceUnavailable
from .flow import FlowEngine, FlowRecord, ModelRegistry, ProcessorGraph, run_graph
from .iot.agent import IotAgent
from .iot.http import IotHttp
from .odp import Portal
from .odp.http import PortalHttp
from .relay import EventRelay
from .timeutil import utc_now_ms
from .twin import RequestProcessor, ScenarioServices

log = logging.getLogger("twinlod.stack")

FLOW_CLIENT_ID = "flow-engine"
READINESS_TIMEOUT_S = 5.0


def type_scopes_from_clients(docs: Any) -> dict[str, set[str]]:
    """Entity-type scopes per client, from the clients file's entityTypes key."""
    scopes: dict[str, set[str]] = {}
    for doc in docs if isinstance(docs, list) else ():
        types = doc.get("entityTypes")
        if types:
            scopes[doc["clientId"]] = set(types)
    return scopes


def _load_json(path: Path, what: str) -> Any:
    try:
        return json.loads(path.read_text("utf-8"))
    except OSError as exc:
        raise ConfigError(f"cannot read {what} {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{what} {path} is not valid JSON: {exc}") from exc


class Stack:
    """Builds, starts, and stops the full service set for one config."""

    def __init__(self, cfg: StackConfig, *, wire_pipelines: bool = True):
        self.cfg = cfg
        self.wire_pipelines = wire_pipelines
        self.running = False
        self._services: list = []  # HttpService-bearing components, start order
        self._graph = None
        self._harvest_stop: threading.Event | None = None
        self._harvest_thread: threading.Thread | None = None
        self.processor: RequestProcessor | None = None
        self.control: AccessControl | None = None
        self.parking_core: BrokerCore | None = None
        self.urban_core: BrokerCore | None = None
        self.portal: Portal | None = None
        self.agent: IotAgent | None = None
        self.relay: EventRelay | None = None
        self.parking_flow: FlowEngine | None = None
        self.urban_flow: FlowEngine | None = None
        self.urls: dict[str, str] = {}

    # --- lifecycle ---

    def start(self) -> "Stack":
        if self.running:
            return self
        cfg = self.cfg
        client_docs = _load_json(cfg.clients_path, "client config")
        clients = clients_from_json(client_docs)
        policies = policies_from_json(_load_json(cfg.policies_path, "policy config"))
        registry = ModelRegistry.from_file(cfg.models_path) if cfg.models_path else ModelRegistry()
        cfg.data_dir.mkdir(parents=True, exist_ok=True)

        self.control = AccessControl(clients, policies, token_ttl_s=cfg.token_ttl_s)
        self.parking_core = BrokerCore(
            dispatcher=NotificationDispatcher(),
            type_scopes=type_scopes_from_clients(client_docs),
        )
        self.urban_core = BrokerCore(dispatcher=NotificationDispatcher())
        self.portal = Portal()
        self.agent = IotAgent(broker=self.parking_core)
        self.relay = EventRelay(
            self.parking_core,
            self.urban_core,
            self.agent,
            app_dir=cfg.app_dir,
            host=cfg.host,
            port=cfg.relay_port,
        )

        try:
            broker_parking = self._up(
                BrokerHttp(self.parking_core, "broker-parking", cfg.host, cfg.broker_parking_port)
            )
            broker_urban = self._up(
                BrokerHttp(self.urban_core, "broker-urban", cfg.host, cfg.broker_urban_port)
            )
            odp = self._up(
                PortalHttp(self.portal, control=self.control, name="odp", host=cfg.host, port=cfg.odp_port)
            )
            iot = self._up(IotHttp(self.agent, "iot-agent", cfg.host, cfg.iot_agent_port))
            access = self._up(
                AccessHttp(
                    self.control,
                    upstream_url=broker_parking.service.url,
                    name="access",
                    host=cfg.host,
                    port=cfg.access_port,
                )
            )
            self.relay.attach()
            relay = self._up(self.relay)
        except Exception:
            self.stop()
            raise

        self.urls = {
            "access": access.service.url,
            "broker-parking": broker_parking.service.url,
            "broker-urban": broker_urban.service.url,
            "odp": odp.service.url,
            "iot-agent": iot.service.url,
            "relay": relay.service.url,
        }
        self._build_flows(registry)
        if self.wire_pipelines:
            if cfg.publication_graph_path is not None:
                doc = _load_json(cfg.publication_graph_path, "publication graph")
                self._graph = run_graph(self.parking_flow, ProcessorGraph.from_document(doc))
                uri = self.parking_core.dispatcher.register_local(
                    "stack-publication", lambda payload: self._graph.offer("ingress", payload)
                )
                self.parking_core.subscribe("OffStreetParking", {"availableSpotNumber"}, uri)
            self._wire_consumption()
        self.running = True
        log.info("stack ready: %s", ", ".join(f"{k}={v}" for k, v in self.urls.items()))
        return self

    def _up(self, component):
        """Start one HTTP-bearing component and wait for its /health."""
        component.service.start()
        self._services.append(component)
        deadline = time.monotonic() + READINESS_TIMEOUT_S
        url = component.service.url + "/health"
        while True:
            try:
                if requests.get(url, timeout=1.0).status_code == 200:
                    break
            except requests.RequestException:
                pass
            if time.monotonic() >= deadline:
                raise ServiceUnavailable(component.service.name)
            time.sleep(0.02)
        log.info("service ready: %s at %s", component.service.name, component.service.url)
        return component

    def _build_flows(self, registry: ModelRegistry) -> None:
        cfg = self.cfg
        flow_token = self._issue_flow_token()
        self.parking_flow = FlowEngine(
            portal=PortalClient(self.urls["odp"], token=flow_token),
            broker=BrokerClient(self.urls["broker-parking"]),
            registry=registry,
            history_path=cfg.data_dir / "history.jsonl",
            dead_letter_path=cfg.data_dir / "dead_letter.jsonl",
            name="parking-flow",
        )
        self.urban_flow = FlowEngine(
            portal=PortalClient(self.urls["odp"], token=flow_token),
            broker=BrokerClient(self.urls["broker-urban"]),
            registry=registry,
            history_path=cfg.data_dir / "urban_history.jsonl",
            dead_letter_path=cfg.data_dir / "urban_dead_letter.jsonl",
            name="urban-flow",
        )

    def _issue_flow_token(self) -> str | None:
        """The dataflow engine authenticates to the portal like any client."""
        docs = _load_json(self.cfg.clients_path, "client config")
        for doc in docs if isinstance(docs, list) else ():
            if doc.get("clientId") == FLOW_CLIENT_ID:
                return self.control.issue_token(FLOW_CLIENT_ID, doc["clientSecret"]).value
        return None

    # --- standing urban-twin consumption ---

    def _wire_consumption(self) -> None:
        """Keep the urban twin answering requests while the stack serves.

        Three standing pieces: a request processor on the urban broker, a
        live mirror that copies parking-spot changes across twins, and a
        harvest thread that re-reads the published datasets on a period so
        the urban broker tracks parking capacity without a private channel.
        """
        self.processor = RequestProcessor(
            self.urban_core,
            max_data_age_ms=int(self.cfg.max_data_age_s * 1000),
            log_path=self.cfg.data_dir / "requests.jsonl",
            name="stack-request-processor",
        )
        self.processor.attach()
        uri = self.parking_core.dispatcher.register_local("stack-spot-mirror", self._spot_feed)
        self.parking_core.subscribe("ParkingSpot", {"status"}, uri)
        self._harvest_stop = threading.Event()
        self._harvest_thread = threading.Thread(
            target=self._harvest_loop, name="twinlod-harvest", daemon=True
        )
        self._harvest_thread.start()

    def _spot_feed(self, payload: dict) -> None:
        records = self.parking_flow.notification_ingress(payload)
        for record in records:
            self.parking_flow.history_sink(record)
            self._upsert_urban(record.payload)

    def _upsert_urban(self, doc: dict) -> None:
        slim = {k: v for k, v in doc.items() if k != "@context"}
        if self.urban_core.has_entity(slim["id"]):
            patch = {k: v for k, v in slim.items() if k not in ("id", "type")}
            self.urban_core.update_attributes(slim["id"], attributes_from_patch(patch))
        else:
            self.urban_core.create_entity(entity_from_document(slim))

    def harvest_once(self) -> int:
        """Re-read every published parking dataset into the urban broker.

        Runs through the portal API exactly as an external consumer would;
        returns the number of entities republished. Also called on a period
        by the harvest thread while the stack serves.
        """
        flow = self.urban_flow
        names = [
            doc["name"]
            for doc in flow.portal.package_search("")
            if str(doc.get("name", "")).startswith("urn:ngsi-ld:OffStreetParking:")
        ]
        records: list[FlowRecord] = []
        for name in names:
            records.extend(flow.dataset_fetch(name))
        docs = flow.rows_to_entities(records)
        now = utc_now_ms()
        flow.republish_to_broker(
            [FlowRecord(payload=doc, provenance="odp_fetch", received_at=now) for doc in docs]
        )
        if self.processor is not None:
            self.processor.note_offstreet_refresh()
        return len(docs)

    def _harvest_loop(self) -> None:
        stop = self._harvest_stop
        while not stop.wait(self.cfg.harvest_period_s):
            try:
                self.harvest_once()
            except Exception:  # pragma: no cover - harvest must outlive blips
                log.exception("open-data harvest failed; retrying next period")

    def stop(self) -> None:
        if self._harvest_thread is not None:
            self._harvest_stop.set()
            self._harvest_thread.join(timeout=5.0)
            self._harvest_thread = None
            self._harvest_stop = None
        self.processor = None
        if self._graph is not None:
            self._graph.stop()
            self._graph = None
        for component in reversed(self._services):
            try:
                component.service.stop()
            except Exception:  # pragma: no cover - best-effort teardown
                log.exception("stopping %s failed", component.service.name)
        self._services.clear()
        for core in (self.parking_core, self.urban_core):
            if core is not None:
                core.dispatcher.stop()
        self.running = False
        self.urls = {}

    def __enter__(self) -> "Stack":
        return self.start()

    def __exit__(self, *exc) -> None:
        self.stop()

    # --- handles ---

    def bundle(self) -> ScenarioServices:
        if not self.running:
            raise ServiceUnavailable("stack is not running")
        return ScenarioServices(
            parking_broker=BrokerClient(self.urls["broker-parking"]),
            urban_broker=BrokerClient(self.urls["broker-urban"]),
            portal=PortalClient(self.urls["odp"]),
            agent=self.agent,
            parking_core=self.parking_core,
            urban_core=self.urban_core,
            parking_flow=self.parking_flow,
            urban_flow=self.urban_flow,
            auth=AuthClient(self.urls["access"]),
            extra_health={
                "iot-agent": lambda: requests.get(
                    self.urls["iot-agent"] + "/health", timeout=2.0
                ).status_code == 200,
                "relay": lambda: requests.get(
                    self.urls["relay"] + "/health", timeout=2.0
                ).status_code == 200,
            },
        )
