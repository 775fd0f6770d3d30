#!/usr/bin/env python3
"""End-to-end walkthrough of the parking federation on one machine.

Starts the full stack on ephemeral ports, then replays the reference
situation the test corpus uses throughout:

1. the operator authenticates at the access gateway and creates an
   off-street parking with 132 free spots through the authorizing proxy,
2. a kerbside sensor registers at the device gateway and reports its
   spot closed — the southbound message alone materialises the spot twin,
3. the publication pipeline turns the parking's state into an open-data
   dataset with rows and a DCAT description,
4. the urban twin harvests that dataset, and a citizen's RequestParking
   posted to the event relay is answered with the nearest available
   target,
5. the operator opens the closed spot with a device command; the ack
   flows back through the gateway and the next request is answered with
   the newly opened spot.

Every step talks to the stack over HTTP exactly as an external client
would; effects are observed by polling the public APIs, never by
reaching into service internals. Exit code 0 means every expectation
held; 1 flags a broken expectation; 2 a configuration problem; 3 an
unreachable service.
"""

from __future__ import annotations

import argparse
import json
import sys
import time
from pathlib import Path

import requests

from twinlod.clients import AuthClient, BrokerClient, PortalClient
from twinlod.config import StackConfig
from twinlod.errors import ConfigError, TwinlodError
from twinlod.stack import Stack

EXIT_OK, EXIT_FAILURE, EXIT_CONFIG, EXIT_SERVICE = 0, 1, 2, 3

OPERATOR = ("operator", "operator-dev-secret-77f3d0")
PARKING_CONTEXT = [
    "https://raw.githubusercontent.com/smart-data-models/dataModel.Parking/master/context.jsonld"
]
CORE_CONTEXT = ["https://uri.etsi.org/ngsi-ld/v1/ngsi-ld-core-context.jsonld"]

OFFSTREET_PARKING = {
    "id": "urn:ngsi-ld:OffStreetParking:1",
    "type": "OffStreetParking",
    "location": {"coordinates": [40.3312618, -3.7574926], "type": "Point"},
    "availableSpotNumber": 132,
    "@context": PARKING_CONTEXT,
}
SPOT_ID = "urn:ngsi-ld:ParkingSpot:123"
PARKING_SPOT = {
    "id": SPOT_ID,
    "type": "ParkingSpot",
    "location": {"coordinates": [40.405382, -3.6734942], "type": "Point"},
    "status": "closed",
    "@context": PARKING_CONTEXT,
}
FIRST_REQUEST = {
    "id": "urn:ngsi-ld:RequestParking:12345",
    "type": "RequestParking",
    "location": {"coordinates": [40.331262, -3.757495], "type": "Point"},
    "@context": CORE_CONTEXT,
}
SECOND_REQUEST = {
    "id": "urn:ngsi-ld:RequestParking:12346",
    "type": "RequestParking",
    "location": {"coordinates": [40.4053, -3.6736], "type": "Point"},
    "@context": CORE_CONTEXT,
}

failures: list[str] = []


def expect(condition: bool, what: str) -> None:
    print(f"  [{'ok' if condition else 'FAILED'}] {what}")
    if not condition:
        failures.append(what)


def wait_for(predicate, what: str, timeout_s: float = 10.0):
    deadline = time.monotonic() + timeout_s
    while time.monotonic() < deadline:
        value = predicate()
        if value:
            return value
        time.sleep(0.05)
    raise TimeoutError(f"timed out waiting for {what}")


def step(title: str) -> None:
    print(f"\n== {title} ==")


def run_demo(stack: Stack) -> int:
    urls = stack.urls
    print("services:")
    for name, url in sorted(urls.items()):
        print(f"  {name:15s} {url}")

    step("operator authenticates and registers the parking")
    token = AuthClient(urls["access"]).token(*OPERATOR)
    print(f"  token issued to {OPERATOR[0]} ({len(token)} chars)")
    proxied = BrokerClient(urls["access"], token=token)
    proxied.create_entity(dict(OFFSTREET_PARKING))
    expect(
        proxied.get_entity(OFFSTREET_PARKING["id"])["availableSpotNumber"] == 132,
        "parking readable back through the authorizing proxy with 132 free spots",
    )
    unauthenticated = requests.get(
        urls["access"] + "/ngsi-ld/v1/entities?type=OffStreetParking", timeout=5
    )
    expect(
        unauthenticated.status_code in (401, 403),
        f"the same read without a token is refused ({unauthenticated.status_code})",
    )

    step("kerbside sensor registers and reports its spot closed")
    proxied.create_entity(dict(PARKING_SPOT))
    requests.post(
        urls["iot-agent"] + "/iot/devices",
        json={
            "deviceId": "spot-123",
            "entityId": SPOT_ID,
            "entityType": "ParkingSpot",
            "attributeMap": {"s": "status"},
            "commandMap": {"open": "open"},
        },
        timeout=5,
    ).raise_for_status()
    requests.post(  # the sensor's first report confirms the twin's state
        urls["iot-agent"] + "/iot/ingest", data=b"spot-123|s|closed", timeout=5
    ).raise_for_status()
    parking_broker = BrokerClient(urls["broker-parking"])
    spot = wait_for(
        lambda: parking_broker.get_entity(SPOT_ID)["status"] == "closed"
        and parking_broker.get_entity(SPOT_ID),
        "spot twin to reflect the southbound measurement",
    )
    expect(spot["status"] == "closed", "spot twin exists and reads closed")

    step("publication pipeline turns broker state into open data")
    portal = PortalClient(urls["odp"])
    dataset = OFFSTREET_PARKING["id"]
    rows = wait_for(
        lambda: portal.has_package(dataset)
        and portal.rows(dataset, "availableSpotNumber"),
        "portal rows for the parking dataset",
    )
    expect([r["value"] for r in rows] == [132], "dataset rows record the 132 free spots")
    shown = portal.package_show(dataset)
    expect(shown["title"] == "Parking 1", f"dataset is titled {shown['title']!r}")
    dcat = portal.dcat(dataset)
    expect("Occupancy level of Parking 1" in dcat, "DCAT describes the occupancy distribution")
    print("  DCAT excerpt:")
    for line in dcat.splitlines()[:10]:
        print(f"    {line}")

    step("urban twin harvests the dataset and answers a parking request")
    urban_broker = BrokerClient(urls["broker-urban"])
    wait_for(
        lambda: urban_broker.has_entity(OFFSTREET_PARKING["id"]),
        "standing harvest to republish the dataset into the urban twin",
    )
    relay = urls["relay"]
    created = requests.post(relay + "/ngsi-ld/v1/entities", json=FIRST_REQUEST, timeout=5)
    expect(created.status_code == 201, "relay accepts the RequestParking creation")
    answer = wait_for(
        lambda: urban_broker.has_entity("urn:ngsi-ld:ResponseParking:12345")
        and urban_broker.get_entity("urn:ngsi-ld:ResponseParking:12345"),
        "ResponseParking:12345",
    )
    print(f"  answer: target={answer.get('targetRef')} distance={answer.get('distanceM'):.1f} m")
    expect(
        answer.get("targetRef") == OFFSTREET_PARKING["id"],
        "nearest available target is the off-street parking (the spot is closed)",
    )
    expect(answer.get("stale") is False, "the answer is based on fresh open data")

    step("operator opens the closed spot via a device command")
    commanded = requests.post(
        relay + "/iot/commands", json={"entityId": SPOT_ID, "command": "open"}, timeout=5
    )
    expect(commanded.status_code == 200, "relay forwards the command to the gateway")
    payload = commanded.json()["payload"]
    print(f"  southbound payload: {payload}")
    expect(payload == "spot-123@open", "gateway translated the command for the device")
    requests.post(  # the device acknowledges by reporting its new state
        urls["iot-agent"] + "/iot/ingest", data=b"spot-123|s|free", timeout=5
    ).raise_for_status()
    wait_for(
        lambda: parking_broker.get_entity(SPOT_ID)["status"] == "free",
        "spot twin to flip to free",
    )
    snapshot = requests.get(relay + "/relay/snapshot", timeout=5).json()
    statuses = {s["id"]: s["status"] for s in snapshot["spots"]}
    expect(statuses.get(SPOT_ID) == "free", "city snapshot shows the spot free")

    step("a request near the opened spot now targets it")
    requests.post(relay + "/ngsi-ld/v1/entities", json=SECOND_REQUEST, timeout=5)
    second = wait_for(
        lambda: urban_broker.has_entity("urn:ngsi-ld:ResponseParking:12346")
        and urban_broker.get_entity("urn:ngsi-ld:ResponseParking:12346"),
        "ResponseParking:12346",
    )
    print(f"  answer: target={second.get('targetRef')} distance={second.get('distanceM'):.1f} m")
    expect(second.get("targetRef") == SPOT_ID, "the freshly opened spot wins on distance")

    print()
    if failures:
        print(f"demo finished with {len(failures)} broken expectation(s):")
        for what in failures:
            print(f"  - {what}")
        return EXIT_FAILURE
    print("demo finished: every expectation held")
    return EXIT_OK


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument(
        "--config",
        default=str(Path(__file__).resolve().parent.parent / "configs" / "stack.json"),
        help="stack config file (default: the shipped one)",
    )
    parser.add_argument(
        "--fixed-ports",
        action="store_true",
        help="bind the ports from the config file instead of ephemeral ones",
    )
    args = parser.parse_args(argv)

    try:
        cfg = StackConfig.from_file(args.config)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    if not args.fixed_ports:
        cfg = cfg.with_ephemeral_ports()

    try:
        stack = Stack(cfg).start()
    except TwinlodError as exc:
        print(f"stack failed to start: {exc}", file=sys.stderr)
        return EXIT_SERVICE
    try:
        return run_demo(stack)
    except (TimeoutError, requests.RequestException) as exc:
        print(f"service failure: {exc}", file=sys.stderr)
        return EXIT_SERVICE
    finally:
        stack.stop()


if __name__ == "__main__":
    sys.exit(main())
