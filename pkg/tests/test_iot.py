import json
import threading

import pytest
import requests
from hypothesis import given, settings, strategies as st

from twinlod.errors import (
    DuplicateDevice,
    InvalidRegistration,
    MalformedPayload,
    UnknownCommand,
    UnknownCommandEntity,
    UnknownDevice,
    UnmappedKey,
)
from twinlod.iot import DeviceRegistration, IotAgent, parse_payload, type_value
from twinlod.iot.http import IotHttp

SPOT_DEVICE = DeviceRegistration(
    device_id="spot-123",
    entity_id="urn:ngsi-ld:ParkingSpot:123",
    entity_type="ParkingSpot",
    attribute_map={"s": "status"},
    command_map={"open": "open", "close": "close"},
)


@pytest.fixture()
def agent(broker):
    a = IotAgent(broker)
    a.register_device(SPOT_DEVICE)
    return a


class TestTyping:
    @pytest.mark.parametrize(
        ("raw", "expected"),
        [
            ("132", 132),
            ("-5", -5),
            ("0.25", 0.25),
            ("-3.7574926", -3.7574926),
            ("1e3", 1000.0),
            (".5", 0.5),
            ("true", True),
            ("false", False),
            ("closed", "closed"),
            ("True", "True"),
            ("nan", "nan"),
            ("inf", "inf"),
            ("12abc", "12abc"),
            ("", ""),
        ],
    )
    def test_cases(self, raw, expected):
        got = type_value(raw)
        assert got == expected and type(got) is type(expected)


class TestParsePayload:
    def test_single_pair(self):
        assert parse_payload("spot-123|s|closed") == ("spot-123", [("s", "closed")])

    def test_multi_pair_preserves_order(self):
        assert parse_payload("dev|a|1|b|2|a|3\n") == ("dev", [("a", "1"), ("b", "2"), ("a", "3")])

    @pytest.mark.parametrize("bad", ["", "dev", "dev|k", "dev|k|v|k2", "|k|v", "dev||v"])
    def test_malformed(self, bad):
        with pytest.raises(MalformedPayload):
            parse_payload(bad)

    def test_empty_value_allowed(self):
        assert parse_payload("dev|k|") == ("dev", [("k", "")])


class TestRegistration:
    def test_duplicate(self, agent):
        with pytest.raises(DuplicateDevice):
            agent.register_device(SPOT_DEVICE)

    def test_both_maps_empty(self):
        with pytest.raises(InvalidRegistration):
            DeviceRegistration("d", "urn:ngsi-ld:X:1", "X")

    def test_command_only_device_is_valid(self):
        DeviceRegistration("gate", "urn:ngsi-ld:Gate:1", "Gate", command_map={"open": "o"})

    def test_reserved_attribute_rejected(self):
        with pytest.raises(InvalidRegistration):
            DeviceRegistration("d", "urn:ngsi-ld:X:1", "X", attribute_map={"k": "id"})

    def test_bad_entity_urn(self):
        with pytest.raises(Exception):
            DeviceRegistration("d", "not-a-urn", "X", attribute_map={"k": "v"})


class TestIngest:
    def test_reference_measurement(self, agent, broker):
        touched = agent.ingest("spot-123|s|closed")
        assert touched == {"status"}
        doc = broker.get_entity("urn:ngsi-ld:ParkingSpot:123", "simplified")
        assert doc == {"id": "urn:ngsi-ld:ParkingSpot:123", "type": "ParkingSpot", "status": "closed"}

    def test_duplicate_key_last_wins(self, agent, broker):
        touched = agent.ingest("spot-123|s|free|s|occupied")
        assert touched == {"status"}
        assert broker.get_entity("urn:ngsi-ld:ParkingSpot:123", "simplified")["status"] == "occupied"

    def test_unknown_device(self, agent):
        with pytest.raises(UnknownDevice):
            agent.ingest("ghost-9|s|free")

    def test_unmapped_key(self, agent, broker):
        with pytest.raises(UnmappedKey):
            agent.ingest("spot-123|temperature|21")
        assert not broker.has_entity("urn:ngsi-ld:ParkingSpot:123")

    def test_patch_after_create(self, agent, broker):
        agent.ingest("spot-123|s|closed")
        agent.ingest("spot-123|s|free")
        doc = broker.get_entity("urn:ngsi-ld:ParkingSpot:123", "simplified")
        assert doc["status"] == "free"

    def test_idempotent_final_state(self, agent, broker):
        agent.ingest("spot-123|s|closed")
        before = broker.get_entity("urn:ngsi-ld:ParkingSpot:123", "simplified")
        agent.ingest("spot-123|s|closed")
        after = broker.get_entity("urn:ngsi-ld:ParkingSpot:123", "simplified")
        assert before == after

    @given(
        values=st.lists(
            st.one_of(
                st.integers(-1000, 1000).map(str),
                st.sampled_from(["free", "occupied", "closed", "true", "false", "3.5"]),
            ),
            min_size=1,
            max_size=20,
        )
    )
    @settings(max_examples=30)
    def test_round_trip_only_mapped_values(self, values):
        from twinlod.broker import BrokerCore

        broker = BrokerCore(dispatcher=_NullDispatcher())
        agent = IotAgent(broker)
        agent.register_device(
            DeviceRegistration(
                "multi",
                "urn:ngsi-ld:Thing:1",
                "Thing",
                attribute_map={"a": "alpha", "b": "beta"},
            )
        )
        for i, v in enumerate(values):
            key = "a" if i % 2 == 0 else "b"
            agent.ingest(f"multi|{key}|{v}")
        doc = broker.get_entity("urn:ngsi-ld:Thing:1", "simplified")
        assert set(doc) <= {"id", "type", "alpha", "beta"}
        last_a = next((v for i, v in reversed(list(enumerate(values))) if i % 2 == 0), None)
        if last_a is not None:
            assert doc["alpha"] == type_value(last_a)

    def test_same_device_serialized_distinct_parallel(self, agent, broker):
        agent.register_device(
            DeviceRegistration(
                "counter",
                "urn:ngsi-ld:Counter:1",
                "Counter",
                attribute_map={"n": "count"},
            )
        )

        def pump(device, key, n):
            for i in range(n):
                agent.ingest(f"{device}|{key}|{i}")

        threads = [
            threading.Thread(target=pump, args=("spot-123", "s", 50)),
            threading.Thread(target=pump, args=("counter", "n", 50)),
        ]
        for t in threads:
            t.start()
        for t in threads:
            t.join()
        assert broker.get_entity("urn:ngsi-ld:ParkingSpot:123", "simplified")["status"] == 49
        assert broker.get_entity("urn:ngsi-ld:Counter:1", "simplified")["count"] == 49


class TestCommands:
    def test_reference_open_command(self, agent):
        payload = agent.send_command("urn:ngsi-ld:ParkingSpot:123", "open")
        assert payload == "spot-123@open"
        log = agent.command_log()
        assert len(log) == 1
        assert log[0].entity_id == "urn:ngsi-ld:ParkingSpot:123"
        assert log[0].directive == "open"
        assert log[0].issued_at > 0

    def test_unknown_command(self, agent):
        with pytest.raises(UnknownCommand):
            agent.send_command("urn:ngsi-ld:ParkingSpot:123", "explode")

    def test_unknown_entity(self, agent):
        with pytest.raises(UnknownCommandEntity):
            agent.send_command("urn:ngsi-ld:ParkingSpot:999", "open")

    def test_log_grows_in_order(self, agent):
        agent.send_command("urn:ngsi-ld:ParkingSpot:123", "open")
        agent.send_command("urn:ngsi-ld:ParkingSpot:123", "close")
        assert [r.command for r in agent.command_log()] == ["open", "close"]


class TestIotHttp:
    @pytest.fixture()
    def served(self, agent):
        http = IotHttp(agent)
        http.service.start()
        yield http.service.url
        http.service.stop()

    def test_ingest_endpoint(self, served, broker):
        resp = requests.post(
            f"{served}/iot/ingest",
            data="spot-123|s|closed",
            headers={"Content-Type": "text/plain"},
        )
        assert resp.status_code == 200
        assert resp.json() == {"touched": ["status"]}
        assert broker.get_entity("urn:ngsi-ld:ParkingSpot:123", "simplified")["status"] == "closed"

    def test_register_and_ingest(self, served, broker):
        resp = requests.post(
            f"{served}/iot/devices",
            json={
                "deviceId": "meter-7",
                "entityId": "urn:ngsi-ld:Meter:7",
                "entityType": "Meter",
                "attributeMap": {"kwh": "energy"},
            },
        )
        assert resp.status_code == 201
        requests.post(f"{served}/iot/ingest", data="meter-7|kwh|42.5")
        assert broker.get_entity("urn:ngsi-ld:Meter:7", "simplified")["energy"] == 42.5

    def test_errors_mapped(self, served):
        assert requests.post(f"{served}/iot/ingest", data="ghost|s|1").status_code == 404
        assert requests.post(f"{served}/iot/ingest", data="spot-123|s").status_code == 400
        assert requests.post(f"{served}/iot/ingest", data="spot-123|zz|1").status_code == 400
        resp = requests.post(
            f"{served}/iot/devices",
            json={"deviceId": "spot-123", "entityId": "urn:ngsi-ld:ParkingSpot:123", "entityType": "ParkingSpot", "attributeMap": {"s": "status"}},
        )
        assert resp.status_code == 409

    def test_command_round_trip(self, served):
        resp = requests.post(
            f"{served}/iot/commands",
            json={"entityId": "urn:ngsi-ld:ParkingSpot:123", "command": "open"},
        )
        assert resp.status_code == 200
        assert resp.json() == {"payload": "spot-123@open"}
        log_resp = requests.get(f"{served}/iot/commands")
        records = [json.loads(line) for line in log_resp.text.splitlines()]
        assert len(records) == 1
        assert records[0]["payload"] == "spot-123@open"
        assert records[0]["entityId"] == "urn:ngsi-ld:ParkingSpot:123"


class _NullDispatcher:
    def submit(self, *a, **kw):
        pass

    def wait_idle(self, timeout_s=0):
        return True

    def register_local(self, name, fn):
        return f"local://{name}"
