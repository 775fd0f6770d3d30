"""Context entities, their attributes, and the two wire renderings.

An entity document has two JSON representations:

* simplified (``keyValues``): each property is flattened to ``name: value``;
  the geo attribute renders as ``{"type": "Point", "coordinates": [lat, lon]}``
  and relationships render as bare URN strings.
* normalized: each attribute is an object carrying its kind explicitly,
  ``{"type": "Property", "value": ...}`` / ``{"type": "GeoProperty", ...}`` /
  ``{"type": "Relationship", "object": "urn:..."}``.

Coordinate arrays are latitude-first on the wire; see :mod:`twinlod.geo`.
JSON-LD ``@context`` entries are stored and echoed opaquely, never fetched.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import Any
from urllib.parse import urlparse

from ..errors import InvalidEntity, InvalidSubscription
from ..geo import GeoPoint
from ..timeutil import format_ms, parse_ms

URN_PREFIX = "urn:ngsi-ld:"

#: Strings with this prefix parse as relationship targets in simplified
#: documents; plain string properties must not look like entity URNs.
_RELATIONSHIP_HINT = URN_PREFIX

GEO_ATTR_NAME = "location"

_RESERVED_KEYS = {"id", "type", "@context"}


def parse_urn(urn: str) -> tuple[str, str]:
    """Split ``urn:ngsi-ld:<Type>:<suffix>`` into (type segment, suffix).

    The suffix may itself contain colons.
    """
    if not isinstance(urn, str) or not urn.startswith(URN_PREFIX):
        raise InvalidEntity(f"not an entity URN: {urn!r}")
    rest = urn[len(URN_PREFIX):]
    type_seg, _, suffix = rest.partition(":")
    if not type_seg or not suffix:
        raise InvalidEntity(f"URN needs non-empty type and suffix segments: {urn!r}")
    return type_seg, suffix


class AttributeKind(str, Enum):
    PROPERTY = "Property"
    GEO_PROPERTY = "GeoProperty"
    RELATIONSHIP = "Relationship"


@dataclass(frozen=True)
class Attribute:
    kind: AttributeKind
    value: Any
    observed_at: int | None = None  # epoch ms, UTC

    def __post_init__(self):
        if self.kind is AttributeKind.GEO_PROPERTY:
            if not isinstance(self.value, GeoPoint):
                raise InvalidEntity("GeoProperty value must be a GeoPoint")
        elif isinstance(self.value, GeoPoint):
            raise InvalidEntity(f"{self.kind.value} value must not be a GeoPoint")
        if self.kind is AttributeKind.RELATIONSHIP:
            if not isinstance(self.value, str) or not self.value.startswith(URN_PREFIX):
                raise InvalidEntity(f"Relationship value must be an entity URN, got {self.value!r}")

    @staticmethod
    def property(value: Any, observed_at: int | None = None) -> "Attribute":
        return Attribute(AttributeKind.PROPERTY, value, observed_at)

    @staticmethod
    def geo(lat: float, lon: float, observed_at: int | None = None) -> "Attribute":
        return Attribute(AttributeKind.GEO_PROPERTY, GeoPoint(lat, lon), observed_at)

    @staticmethod
    def relationship(target: str, observed_at: int | None = None) -> "Attribute":
        return Attribute(AttributeKind.RELATIONSHIP, target, observed_at)


@dataclass(frozen=True)
class Entity:
    id: str
    entity_type: str
    attributes: dict[str, Attribute] = field(default_factory=dict)
    contexts: tuple[str, ...] = ()

    def __post_init__(self):
        parse_urn(self.id)
        if not self.entity_type or not isinstance(self.entity_type, str):
            raise InvalidEntity("entity type must be a non-empty string")
        for name, attr in self.attributes.items():
            if name in _RESERVED_KEYS:
                raise InvalidEntity(f"{name!r} is a reserved key, not an attribute name")
            if attr.kind is AttributeKind.GEO_PROPERTY and name != GEO_ATTR_NAME:
                raise InvalidEntity(
                    f"geo attribute must be named {GEO_ATTR_NAME!r}, got {name!r}"
                )

    @property
    def location(self) -> GeoPoint | None:
        attr = self.attributes.get(GEO_ATTR_NAME)
        if attr is not None and attr.kind is AttributeKind.GEO_PROPERTY:
            return attr.value
        return None

    def with_attributes(self, patch: dict[str, Attribute]) -> "Entity":
        merged = dict(self.attributes)
        merged.update(patch)
        return Entity(self.id, self.entity_type, merged, self.contexts)


# --- wire parsing ------------------------------------------------------------

def _attr_from_normalized(name: str, doc: dict) -> Attribute:
    kind = AttributeKind(doc["type"])
    observed = parse_ms(doc["observedAt"]) if "observedAt" in doc else None
    if kind is AttributeKind.GEO_PROPERTY:
        value = doc.get("value")
        if not isinstance(value, dict) or value.get("type") != "Point":
            raise InvalidEntity(f"GeoProperty {name!r} must carry a Point value")
        return Attribute(kind, GeoPoint.from_coordinates(value.get("coordinates")), observed)
    if kind is AttributeKind.RELATIONSHIP:
        return Attribute(kind, doc.get("object"), observed)
    return Attribute(kind, doc.get("value"), observed)


def _attr_from_simplified(name: str, value: Any) -> Attribute:
    if isinstance(value, dict) and value.get("type") == "Point" and "coordinates" in value:
        return Attribute(AttributeKind.GEO_PROPERTY, GeoPoint.from_coordinates(value["coordinates"]))
    if isinstance(value, str) and value.startswith(_RELATIONSHIP_HINT):
        return Attribute(AttributeKind.RELATIONSHIP, value)
    return Attribute(AttributeKind.PROPERTY, value)


def _is_normalized_attr(value: Any) -> bool:
    return (
        isinstance(value, dict)
        and isinstance(value.get("type"), str)
        and value.get("type") in {k.value for k in AttributeKind}
    )


def attribute_from_wire(name: str, value: Any) -> Attribute:
    if _is_normalized_attr(value):
        return _attr_from_normalized(name, value)
    return _attr_from_simplified(name, value)


def entity_from_document(doc: Any) -> Entity:
    """Build an entity from a wire document, simplified or normalized.

    Either form (and a mix of the two) is accepted; creation bodies taken
    straight from published entity listings load verbatim.
    """
    if not isinstance(doc, dict):
        raise InvalidEntity("entity document must be a JSON object")
    if "id" not in doc or "type" not in doc:
        raise InvalidEntity("entity document needs 'id' and 'type'")
    contexts = doc.get("@context") or ()
    if isinstance(contexts, str):
        contexts = (contexts,)
    elif isinstance(contexts, (list, tuple)):
        contexts = tuple(contexts)
    else:
        raise InvalidEntity("@context must be a string or list of strings")
    attributes: dict[str, Attribute] = {}
    for name, value in doc.items():
        if name in _RESERVED_KEYS:
            continue
        attributes[name] = attribute_from_wire(name, value)
    return Entity(doc["id"], doc["type"], attributes, contexts)


def attributes_from_patch(doc: Any) -> dict[str, Attribute]:
    """Parse a PATCH body (attribute fragment) into a name→Attribute map.

    'id' and 'type' are immutable and rejected; '@context' is ignored.
    """
    if not isinstance(doc, dict):
        raise InvalidEntity("patch must be a JSON object")
    if "id" in doc or "type" in doc:
        raise InvalidEntity("'id' and 'type' are immutable")
    return {
        name: attribute_from_wire(name, value)
        for name, value in doc.items()
        if name != "@context"
    }


# --- wire rendering ----------------------------------------------------------

def _simplified_value(attr: Attribute) -> Any:
    if attr.kind is AttributeKind.GEO_PROPERTY:
        return {"type": "Point", "coordinates": attr.value.as_coordinates()}
    return attr.value


def to_simplified(entity: Entity) -> dict:
    doc: dict[str, Any] = {"id": entity.id, "type": entity.entity_type}
    for name, attr in entity.attributes.items():
        doc[name] = _simplified_value(attr)
    if entity.contexts:
        doc["@context"] = list(entity.contexts)
    return doc


def to_normalized(entity: Entity) -> dict:
    doc: dict[str, Any] = {"id": entity.id, "type": entity.entity_type}
    for name, attr in entity.attributes.items():
        rendered: dict[str, Any] = {"type": attr.kind.value}
        if attr.kind is AttributeKind.RELATIONSHIP:
            rendered["object"] = attr.value
        elif attr.kind is AttributeKind.GEO_PROPERTY:
            rendered["value"] = {"type": "Point", "coordinates": attr.value.as_coordinates()}
        else:
            rendered["value"] = attr.value
        if attr.observed_at is not None:
            rendered["observedAt"] = format_ms(attr.observed_at)
        doc[name] = rendered
    if entity.contexts:
        doc["@context"] = list(entity.contexts)
    return doc


# --- subscriptions and notifications -----------------------------------------

_ALLOWED_ENDPOINT_SCHEMES = {"http", "https", "local"}


def validate_endpoint(uri: str) -> str:
    if not isinstance(uri, str):
        raise InvalidSubscription("endpoint must be a string URI")
    parsed = urlparse(uri)
    if parsed.scheme not in _ALLOWED_ENDPOINT_SCHEMES or not (parsed.netloc or parsed.path):
        raise InvalidSubscription(f"not a valid endpoint URI: {uri!r}")
    return uri


@dataclass
class Subscription:
    id: str
    entity_type_filter: str
    watched_attributes: frozenset[str]  # empty = all attributes
    notification_endpoint: str
    status: str = "active"
    deliveries_attempted: int = 0
    deliveries_succeeded: int = 0

    def __post_init__(self):
        if not self.entity_type_filter:
            raise InvalidSubscription("entity type filter must be non-empty")
        validate_endpoint(self.notification_endpoint)
        self.watched_attributes = frozenset(self.watched_attributes)

    def matches(self, entity_type: str, touched: set[str]) -> bool:
        if self.status != "active" or entity_type != self.entity_type_filter:
            return False
        if not touched:
            return False
        return not self.watched_attributes or bool(self.watched_attributes & touched)


@dataclass(frozen=True)
class Notification:
    subscription_id: str
    fired_at: int  # epoch ms
    entities: tuple[Entity, ...]
    entity_type_filter: str = ""

    def __post_init__(self):
        if not self.entities:
            raise InvalidEntity("notification must carry at least one entity")
        if self.entity_type_filter:
            for e in self.entities:
                if e.entity_type != self.entity_type_filter:
                    raise InvalidEntity(
                        f"notification entity {e.id} does not match type filter"
                    )

    def to_wire(self) -> dict:
        return {
            "subscriptionId": self.subscription_id,
            "notifiedAt": format_ms(self.fired_at),
            "data": [to_simplified(e) for e in self.entities],
        }
