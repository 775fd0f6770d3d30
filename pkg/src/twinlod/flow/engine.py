"""Dataflow operations: homogenize, catalog, publish, fetch, republish.

A FlowEngine binds one portal client, one optional broker client, a model
registry, and a history file. Processor graphs call these operations from
their worker threads; everything here is also callable directly.
"""

from __future__ import annotations

import json
import re
import threading
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Iterable

from twinlod.broker.model import parse_urn
from twinlod.clients import BrokerClient, PortalClient
from twinlod.errors import (
    Conflict,
    InvalidEntity,
    MalformedNotification,
    NameConflict,
    StorageFailure,
    UnmappableRecord,
)
from twinlod.flow.models import ModelRegistry
from twinlod.flow.records import FlowRecord
from twinlod.timeutil import format_ms, utc_now_ms

_CAMEL_WORD = re.compile(r"[A-Z][a-z0-9]*|[a-z0-9]+")


def humanize_title(entity_id: str, entity_type: str) -> str:
    """`urn:ngsi-ld:OffStreetParking:1` → "Parking 1".

    The title is the last camel-case word of the entity type followed by
    the URN suffix.
    """
    words = _CAMEL_WORD.findall(entity_type)
    last = words[-1] if words else entity_type
    _, suffix = parse_urn(entity_id)
    return f"{last} {suffix}"


def distribution_title(attribute: str, dataset_title: str) -> str:
    if attribute == "availableSpotNumber":
        return f"Occupancy level of {dataset_title}"
    return f"{attribute} of {dataset_title}"


@dataclass(frozen=True)
class MappingRules:
    """How one entity stream lands in the portal."""

    resource_attribute_whitelist: frozenset[str] = frozenset()
    metadata_only: bool = False
    broker_public_url: str = ""

    def __post_init__(self):
        object.__setattr__(
            self, "resource_attribute_whitelist", frozenset(self.resource_attribute_whitelist)
        )
        if not self.metadata_only and not self.resource_attribute_whitelist:
            raise InvalidEntity("data-mode mapping rules need a non-empty attribute whitelist")
        if self.metadata_only and not self.broker_public_url:
            raise InvalidEntity("metadata-only rules need the broker public URL")

    @classmethod
    def from_config(cls, doc: dict[str, Any]) -> "MappingRules":
        return cls(
            resource_attribute_whitelist=frozenset(doc.get("whitelist", ())),
            metadata_only=bool(doc.get("metadata_only", False)),
            broker_public_url=doc.get("broker_public_url", ""),
        )


@dataclass(frozen=True)
class HomogenizationRules:
    """Rename/unit mapping onto a Smart-Data-Model shape."""

    rename: dict[str, str] = field(default_factory=dict)
    location_pair: tuple[str, str] | None = None  # (lat field, lng field)
    id_field: str | None = None
    scale: dict[str, float] = field(default_factory=dict)  # unit conversion per attribute

    @classmethod
    def from_config(cls, doc: dict[str, Any]) -> "HomogenizationRules":
        pair = doc.get("location_pair")
        return cls(
            rename=dict(doc.get("rename", {})),
            location_pair=tuple(pair) if pair else None,
            id_field=doc.get("id_field"),
            scale={k: float(v) for k, v in doc.get("scale", {}).items()},
        )


@dataclass(frozen=True)
class CatalogMetadata:
    dataset_title: str
    description: str
    issued: int  # epoch ms
    modified: int
    keywords: tuple[str, ...]
    distribution_titles: tuple[str, ...]
    access_url: str

    def __post_init__(self):
        if not self.dataset_title:
            raise InvalidEntity("dataset title must be non-empty")
        if self.modified < self.issued:
            raise InvalidEntity("modified precedes issued")


class FetchResult(list):
    """List of FlowRecords plus redirect hints for metadata-only resources."""

    def __init__(self, records: Iterable[FlowRecord] = (), redirects: Iterable[str] = ()):
        super().__init__(records)
        self.redirects = list(redirects)


class FlowEngine:
    def __init__(
        self,
        portal: PortalClient | None = None,
        broker: BrokerClient | None = None,
        registry: ModelRegistry | None = None,
        history_path: str | Path | None = None,
        dead_letter_path: str | Path | None = None,
        clock: Callable[[], int] = utc_now_ms,
        name: str = "flow",
    ):
        self.name = name
        self.portal = portal
        self.broker = broker
        self.registry = registry or ModelRegistry()
        self.history_path = Path(history_path) if history_path else None
        self.dead_letter_path = Path(dead_letter_path) if dead_letter_path else None
        self.clock = clock
        self._lock = threading.Lock()
        self._seen_notifications: set[tuple[str, str]] = set()
        self._issued_at: dict[str, int] = {}
        self._generated_ids = 0
        self.counters = {
            "notifications_in": 0,
            "notifications_deduped": 0,
            "records_emitted": 0,
            "fields_dropped": 0,
            "history_appended": 0,
            "rows_appended": 0,
            "dead_letters": 0,
        }

    # --- ingress ---

    def notification_ingress(self, notification: dict[str, Any]) -> list[FlowRecord]:
        """One FlowRecord per notified entity; replays drop to nothing."""
        if not isinstance(notification, dict):
            raise MalformedNotification("notification must be a JSON object")
        sub_id = notification.get("subscriptionId")
        fired_at = notification.get("notifiedAt")
        data = notification.get("data")
        if not isinstance(sub_id, str) or not sub_id:
            raise MalformedNotification("missing subscriptionId")
        if not isinstance(fired_at, (str, int)):
            raise MalformedNotification("missing notifiedAt")
        if not isinstance(data, list) or not data:
            raise MalformedNotification("data must be a non-empty list")
        for doc in data:
            if not isinstance(doc, dict) or "id" not in doc or "type" not in doc:
                raise MalformedNotification("each notified entity needs id and type")
        key = (sub_id, str(fired_at))
        with self._lock:
            self.counters["notifications_in"] += 1
            if key in self._seen_notifications:
                self.counters["notifications_deduped"] += 1
                return []
            self._seen_notifications.add(key)
        now = self.clock()
        records = [
            FlowRecord(
                payload=doc,
                provenance="broker_notification",
                received_at=now,
                attributes_meta={"subscription_id": sub_id, "notified_at": str(fired_at)},
            )
            for doc in data
        ]
        with self._lock:
            self.counters["records_emitted"] += len(records)
        return records

    # --- homogenization ---

    def to_smart_model(
        self,
        record: FlowRecord,
        rules: HomogenizationRules,
        target_type: str,
    ) -> FlowRecord:
        declared = set(self.registry.attribute_declarations(target_type))
        payload = dict(record.payload)
        dropped = 0

        if record.entity_shaped:
            entity_id = payload.pop("id")
            payload.pop("type", None)
            payload.pop("@context", None)
            attrs: dict[str, Any] = {}
            for name, value in payload.items():
                target = rules.rename.get(name, name)
                if target in declared:
                    attrs[target] = value
                else:
                    dropped += 1
        else:
            attrs = {}
            consumed: set[str] = set()
            if rules.location_pair is not None:
                lat_key, lng_key = rules.location_pair
                if lat_key in payload and lng_key in payload:
                    attrs["location"] = {
                        "type": "Point",
                        "coordinates": [float(payload[lat_key]), float(payload[lng_key])],
                    }
                    consumed.update((lat_key, lng_key))
            if rules.id_field is not None and rules.id_field in payload:
                raw = str(payload[rules.id_field])
                entity_id = raw if raw.startswith("urn:ngsi-ld:") else f"urn:ngsi-ld:{target_type}:{raw}"
                consumed.add(rules.id_field)
            else:
                with self._lock:
                    self._generated_ids += 1
                    entity_id = f"urn:ngsi-ld:{target_type}:gen-{self._generated_ids}"
            for name, value in payload.items():
                if name in consumed:
                    continue
                target = rules.rename.get(name, name)
                if target in declared:
                    attrs[target] = value
                else:
                    dropped += 1

        for name, factor in rules.scale.items():
            if name in attrs and isinstance(attrs[name], (int, float)) and not isinstance(attrs[name], bool):
                attrs[name] = attrs[name] * factor

        doc = {"id": entity_id, "type": target_type, **attrs}
        problems = self.registry.validate(doc)
        if problems:
            raise UnmappableRecord(f"{entity_id}: {'; '.join(problems)}")
        with self._lock:
            self.counters["fields_dropped"] += dropped
        return FlowRecord(
            payload=doc,
            provenance=record.provenance,
            received_at=record.received_at,
            attributes_meta={**record.attributes_meta, "dropped_fields": str(dropped)},
        )

    # --- cataloguing ---

    def update_ckan_metadata(self, record: FlowRecord, rules: MappingRules) -> CatalogMetadata:
        payload = record.payload
        if not record.entity_shaped:
            raise InvalidEntity("metadata requires an entity-shaped record")
        entity_id, entity_type = payload["id"], payload["type"]
        title = humanize_title(entity_id, entity_type)
        now = self.clock()
        with self._lock:
            issued = self._issued_at.setdefault(entity_id, now)
        attributes = sorted(
            name
            for name in payload
            if name not in ("id", "type", "@context")
            and name in rules.resource_attribute_whitelist
        )
        if rules.metadata_only:
            access_url = f"{rules.broker_public_url.rstrip('/')}/ngsi-ld/v1/entities/{entity_id}"
            titles: tuple[str, ...] = (f"Live data of {title}",)
        else:
            base = self.portal.base_url if self.portal is not None else ""
            first = attributes[0] if attributes else sorted(rules.resource_attribute_whitelist)[0]
            access_url = f"{base}/datasets/{entity_id}/resources/{first}/rows"
            titles = tuple(distribution_title(a, title) for a in attributes)
        return CatalogMetadata(
            dataset_title=title,
            description=f"Context data of entity {entity_id} ({entity_type}) published as linked open data.",
            issued=issued,
            modified=max(now, issued),
            keywords=(entity_type.lower(), "digital-twin"),
            distribution_titles=titles,
            access_url=access_url,
        )

    # --- publication ---

    def ngsi_to_ckan(
        self,
        record: FlowRecord,
        metadata: CatalogMetadata,
        rules: MappingRules,
    ) -> dict[str, Any]:
        """Idempotent portal write for one entity snapshot."""
        if self.portal is None:
            raise InvalidEntity("engine has no portal client")
        if not record.entity_shaped:
            raise InvalidEntity("publication requires an entity-shaped record")
        payload = record.payload
        entity_id, entity_type = payload["id"], payload["type"]
        org = entity_type.lower()

        created_org = self.portal.ensure_organization(org, entity_type)
        created_dataset = False
        if not self.portal.has_package(entity_id):
            try:
                self.portal.package_create(
                    entity_id,
                    metadata.dataset_title,
                    org,
                    description=metadata.description,
                    keywords=list(metadata.keywords),
                )
                created_dataset = True
            except Conflict:
                pass  # lost a creation race; treat as pre-existing
        shown = self.portal.package_show(entity_id)
        if shown["owner_org"] != org:
            raise NameConflict(
                f"dataset {entity_id!r} belongs to {shown['owner_org']!r}, not {org!r}"
            )
        if not created_dataset:
            # modified must advance on every publication event
            self.portal.update_metadata(entity_id, keywords=list(metadata.keywords))

        existing = {r["id"] for r in shown["resources"]}
        resources_created: list[str] = []
        rows_appended = 0

        if rules.metadata_only:
            if "live" not in existing:
                self.portal.resource_create(
                    entity_id,
                    "live",
                    f"Live data of {metadata.dataset_title}",
                    format="NGSI-LD",
                    external_url=metadata.access_url,
                )
                resources_created.append("live")
        else:
            recorded_at = format_ms(record.received_at)
            for attribute in sorted(rules.resource_attribute_whitelist):
                if attribute not in payload:
                    continue
                if attribute not in existing:
                    self.portal.resource_create(
                        entity_id,
                        attribute,
                        distribution_title(attribute, metadata.dataset_title),
                    )
                    resources_created.append(attribute)
                    existing.add(attribute)
                self.portal.resource_append(
                    entity_id,
                    attribute,
                    {"recorded_at": recorded_at, "value": payload[attribute]},
                )
                rows_appended += 1
        with self._lock:
            self.counters["rows_appended"] += rows_appended
        return {
            "organization": org,
            "dataset": entity_id,
            "created_org": created_org,
            "created_dataset": created_dataset,
            "resources_created": resources_created,
            "rows_appended": rows_appended,
        }

    # --- history ---

    def history_sink(self, record: FlowRecord) -> int:
        if not record.entity_shaped:
            raise InvalidEntity("history requires an entity-shaped record")
        if self.history_path is None:
            raise StorageFailure("engine has no history path")
        payload = record.payload
        entries = [
            {
                "entity_id": payload["id"],
                "entity_type": payload["type"],
                "attribute": name,
                "value": value,
                "recorded_at": record.received_at,
            }
            for name, value in payload.items()
            if name not in ("id", "type", "@context")
        ]
        if not entries:
            return 0
        lines = "".join(json.dumps(e, separators=(",", ":")) + "\n" for e in entries)
        try:
            with self._lock:
                with open(self.history_path, "a", encoding="utf-8") as fh:
                    fh.write(lines)
                self.counters["history_appended"] += len(entries)
        except OSError as exc:
            raise StorageFailure(str(exc)) from exc
        return len(entries)

    def read_history(self) -> list[dict[str, Any]]:
        if self.history_path is None or not self.history_path.exists():
            return []
        with open(self.history_path, encoding="utf-8") as fh:
            return [json.loads(line) for line in fh if line.strip()]

    # --- consumption ---

    def dataset_fetch(self, dataset_name: str) -> FetchResult:
        if self.portal is None:
            raise InvalidEntity("engine has no portal client")
        shown = self.portal.package_show(dataset_name)
        records: list[FlowRecord] = []
        redirects: list[str] = []
        now = self.clock()
        for resource in shown["resources"]:
            if "url" in resource:
                redirects.append(resource["url"])
                continue
            for row in self.portal.rows(dataset_name, resource["id"]):
                records.append(
                    FlowRecord(
                        payload=row,
                        provenance="odp_fetch",
                        received_at=now,
                        attributes_meta={
                            "dataset": dataset_name,
                            "resource": resource["id"],
                            "attribute": resource["id"],
                        },
                    )
                )
        return FetchResult(records, redirects)

    def rows_to_entities(self, records: Iterable[FlowRecord]) -> list[dict[str, Any]]:
        """Rebuild simplified entities from fetched rows (last value wins)."""
        merged: dict[str, dict[str, Any]] = {}
        for record in records:
            meta = record.attributes_meta
            dataset = meta.get("dataset")
            attribute = meta.get("attribute")
            if not dataset or not attribute:
                raise UnmappableRecord("fetched record lacks dataset/attribute meta")
            entity_type, _ = parse_urn(dataset)
            doc = merged.setdefault(dataset, {"id": dataset, "type": entity_type})
            row = record.payload
            doc[attribute] = row.get("value") if isinstance(row, dict) and "value" in row else row
        return [merged[k] for k in sorted(merged)]

    def republish_to_broker(self, records: Iterable[FlowRecord]) -> dict[str, list[str]]:
        if self.broker is None:
            raise InvalidEntity("engine has no broker client")
        created: list[str] = []
        patched: list[str] = []
        for record in records:
            if not isinstance(record, FlowRecord) or not record.entity_shaped:
                raise InvalidEntity("republish requires entity-shaped records")
            doc = dict(record.payload)
            entity_id = doc["id"]
            if self.broker.has_entity(entity_id):
                attrs = {k: v for k, v in doc.items() if k not in ("id", "type", "@context")}
                self.broker.patch_attributes(entity_id, attrs)
                patched.append(entity_id)
            else:
                self.broker.create_entity(doc)
                created.append(entity_id)
        return {"created": created, "patched": patched}

    # --- dead letters ---

    def dead_letter(self, item: Any, error: Exception) -> None:
        with self._lock:
            self.counters["dead_letters"] += 1
        if self.dead_letter_path is None:
            return
        entry = {
            "record": item.to_jsonable() if isinstance(item, FlowRecord) else repr(item),
            "error": f"{type(error).__name__}: {error}",
            "at": format_ms(self.clock()),
        }
        with self._lock:
            with open(self.dead_letter_path, "a", encoding="utf-8") as fh:
                fh.write(json.dumps(entry, separators=(",", ":")) + "\n")
