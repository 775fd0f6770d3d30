"""The unit of flow between processors."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Mapping

from twinlod.errors import InvalidEntity

PROVENANCES = frozenset({"broker_notification", "odp_fetch", "file"})


@dataclass(frozen=True)
class FlowRecord:
    payload: Mapping[str, Any]  # entity snapshot or raw tabular row
    provenance: str
    received_at: int  # epoch ms
    attributes_meta: Mapping[str, str] = field(default_factory=dict)

    def __post_init__(self):
        if self.provenance not in PROVENANCES:
            raise InvalidEntity(f"unknown provenance {self.provenance!r}")
        if not self.payload:
            raise InvalidEntity("flow record payload must be non-empty")

    @property
    def entity_shaped(self) -> bool:
        return "id" in self.payload and "type" in self.payload

    def to_jsonable(self) -> dict[str, Any]:
        return {
            "payload": dict(self.payload),
            "provenance": self.provenance,
            "received_at": self.received_at,
            "attributes_meta": dict(self.attributes_meta),
        }
