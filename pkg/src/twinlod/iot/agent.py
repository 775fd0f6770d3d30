"""Gateway between a line-oriented device protocol and broker entities.

Measurements arrive as `<device_id>|k|v[|k|v...]` lines, get typed and
renamed through the device's attribute map, and land as entity patches
(the entity is created on first contact). Commands travel the other way
as `<device_id>@<directive>` payloads with a queryable issuance log.
"""

from __future__ import annotations

import re
import threading
from dataclasses import dataclass, field
from typing import Any, Callable

from twinlod.broker.core import BrokerCore
from twinlod.broker.model import Attribute, Entity, parse_urn
from twinlod.errors import (
    AlreadyExists,
    DuplicateDevice,
    InvalidRegistration,
    MalformedPayload,
    UnknownCommand,
    UnknownCommandEntity,
    UnknownDevice,
    UnmappedKey,
)
from twinlod.timeutil import utc_now_ms

_INT_RE = re.compile(r"-?\d+")
_DECIMAL_RE = re.compile(r"-?(\d+\.\d*|\.\d+|\d+)([eE][+-]?\d+)?")
_RESERVED_ATTRS = {"id", "type"}


def type_value(raw: str) -> Any:
    """Deterministic typing: integer, then decimal, then boolean, else string."""
    if _INT_RE.fullmatch(raw):
        return int(raw)
    if _DECIMAL_RE.fullmatch(raw):
        return float(raw)
    if raw == "true":
        return True
    if raw == "false":
        return False
    return raw


def parse_payload(line: str) -> tuple[str, list[tuple[str, str]]]:
    line = line.strip("\r\n")
    if not line:
        raise MalformedPayload("empty payload line")
    parts = line.split("|")
    if len(parts) < 3 or len(parts) % 2 == 0:
        raise MalformedPayload(f"payload needs <device_id>|k|v pairs, got {len(parts)} fields")
    device_id = parts[0]
    if not device_id:
        raise MalformedPayload("empty device id")
    pairs = []
    for i in range(1, len(parts), 2):
        key, value = parts[i], parts[i + 1]
        if not key:
            raise MalformedPayload("empty measurement key")
        pairs.append((key, value))
    return device_id, pairs


@dataclass(frozen=True)
class DeviceRegistration:
    device_id: str
    entity_id: str
    entity_type: str
    attribute_map: dict[str, str] = field(default_factory=dict)
    command_map: dict[str, str] = field(default_factory=dict)

    def __post_init__(self):
        if not self.device_id:
            raise InvalidRegistration("device_id must be non-empty")
        if not self.entity_type:
            raise InvalidRegistration("entity_type must be non-empty")
        parse_urn(self.entity_id)
        if not self.attribute_map and not self.command_map:
            raise InvalidRegistration(f"{self.device_id}: maps are both empty")
        for key, attr in self.attribute_map.items():
            if not key or not attr or attr in _RESERVED_ATTRS:
                raise InvalidRegistration(f"{self.device_id}: bad attribute mapping {key!r}→{attr!r}")
        for command, directive in self.command_map.items():
            if not command or not directive:
                raise InvalidRegistration(f"{self.device_id}: bad command mapping {command!r}")


@dataclass(frozen=True)
class CommandRecord:
    entity_id: str
    command: str
    directive: str
    device_id: str
    payload: str
    issued_at: int  # epoch ms

    def to_wire(self) -> dict[str, Any]:
        return {
            "entityId": self.entity_id,
            "command": self.command,
            "directive": self.directive,
            "deviceId": self.device_id,
            "payload": self.payload,
            "issuedAt": self.issued_at,
        }


class IotAgent:
    def __init__(self, broker: BrokerCore, clock: Callable[[], int] = utc_now_ms):
        self.broker = broker
        self.clock = clock
        self._registry_lock = threading.Lock()
        self._devices: dict[str, DeviceRegistration] = {}
        self._by_entity: dict[str, list[str]] = {}
        self._device_locks: dict[str, threading.Lock] = {}
        self._log_lock = threading.Lock()
        self._command_log: list[CommandRecord] = []

    def register_device(self, registration: DeviceRegistration) -> None:
        with self._registry_lock:
            if registration.device_id in self._devices:
                raise DuplicateDevice(registration.device_id)
            self._devices[registration.device_id] = registration
            self._by_entity.setdefault(registration.entity_id, []).append(registration.device_id)
            self._device_locks[registration.device_id] = threading.Lock()

    def devices(self) -> list[DeviceRegistration]:
        with self._registry_lock:
            return list(self._devices.values())

    def ingest(self, payload_line: str) -> set[str]:
        device_id, pairs = parse_payload(payload_line)
        with self._registry_lock:
            registration = self._devices.get(device_id)
            lock = self._device_locks.get(device_id)
        if registration is None:
            raise UnknownDevice(device_id)
        patch: dict[str, Attribute] = {}
        for key, raw in pairs:  # duplicate keys collapse, last value wins
            attr_name = registration.attribute_map.get(key)
            if attr_name is None:
                raise UnmappedKey(f"{device_id}: key {key!r} has no attribute mapping")
            patch[attr_name] = Attribute.property(type_value(raw))
        with lock:  # same-device ingests apply in arrival order
            if not self.broker.has_entity(registration.entity_id):
                entity = Entity(registration.entity_id, registration.entity_type, patch)
                try:
                    self.broker.create_entity(entity)
                    return set(patch)
                except AlreadyExists:
                    pass
            self.broker.update_attributes(registration.entity_id, patch)
        return set(patch)

    def send_command(self, entity_id: str, command: str) -> str:
        with self._registry_lock:
            device_ids = list(self._by_entity.get(entity_id, ()))
            registrations = [self._devices[d] for d in device_ids]
        if not registrations:
            raise UnknownCommandEntity(f"no device registered for {entity_id}")
        for registration in registrations:
            directive = registration.command_map.get(command)
            if directive is not None:
                payload = f"{registration.device_id}@{directive}"
                record = CommandRecord(
                    entity_id=entity_id,
                    command=command,
                    directive=directive,
                    device_id=registration.device_id,
                    payload=payload,
                    issued_at=self.clock(),
                )
                with self._log_lock:
                    self._command_log.append(record)
                return payload
        raise UnknownCommand(f"{entity_id}: no device accepts command {command!r}")

    def command_log(self) -> list[CommandRecord]:
        with self._log_lock:
            return list(self._command_log)
