"""NGSI-LD flavored HTTP surface over :class:`BrokerCore`.

Routes:
    POST   /ngsi-ld/v1/entities                     -> 201 (Location header)
    GET    /ngsi-ld/v1/entities?type=&q=&georel=... -> 200, list
    GET    /ngsi-ld/v1/entities/{id}?options=       -> 200
    PATCH  /ngsi-ld/v1/entities/{id}/attrs          -> 204
    DELETE /ngsi-ld/v1/entities/{id}                -> 204
    POST   /ngsi-ld/v1/subscriptions                -> 201

``options=keyValues`` selects the simplified rendering; the default is
normalized. The PEP proxy forwards the authenticated client id in the
``X-Auth-Client`` header; clients with a configured type scope are
confined to those entity types here, since verb/path policies alone
cannot see entity types.
"""

from __future__ import annotations

import json
import re

from ..errors import InvalidQuery, InvalidSubscription
from ..geo import GeoPoint
from ..httpkit import HttpService, Request, Response, route
from .core import BrokerCore, Predicate
from .model import (
    Subscription,
    attributes_from_patch,
    entity_from_document,
    parse_urn,
)

_Q_OP_PATTERN = re.compile(r"(>=|<=|==|>|<|=)")

AUTH_CLIENT_HEADER = "x-auth-client"


def parse_q(q: str) -> list[Predicate]:
    """Parse ``attr>0;other==\"x\"`` into predicates."""
    predicates = []
    for clause in q.split(";"):
        clause = clause.strip()
        if not clause:
            continue
        m = _Q_OP_PATTERN.search(clause)
        if not m:
            raise InvalidQuery(f"no operator in query clause {clause!r}")
        name = clause[: m.start()].strip()
        op = m.group(0)
        literal = _parse_literal(clause[m.end():].strip())
        if not name:
            raise InvalidQuery(f"missing attribute name in clause {clause!r}")
        predicates.append(Predicate(name, "==" if op == "=" else op, literal))
    return predicates


def _parse_literal(text: str):
    if text == "":
        raise InvalidQuery("empty literal")
    if text in ("true", "false"):
        return text == "true"
    if len(text) >= 2 and text[0] == text[-1] and text[0] in "\"'":
        return text[1:-1]
    try:
        return int(text)
    except ValueError:
        pass
    try:
        return float(text)
    except ValueError:
        return text


def _parse_near(request: Request) -> tuple[GeoPoint, float] | None:
    georel = request.param("georel")
    if georel is None:
        return None
    parts = georel.split(";")
    if parts[0] != "near":
        raise InvalidQuery(f"unsupported georel {parts[0]!r}")
    max_distance = None
    for p in parts[1:]:
        key, _, value = p.partition("==")
        if key == "maxDistance":
            try:
                max_distance = float(value)
            except ValueError as exc:
                raise InvalidQuery(f"bad maxDistance {value!r}") from exc
    if max_distance is None:
        raise InvalidQuery("georel=near requires maxDistance==<meters>")
    geometry = request.param("geometry", "Point")
    if geometry != "Point":
        raise InvalidQuery(f"unsupported geometry {geometry!r}")
    coords_raw = request.param("coordinates")
    if coords_raw is None:
        raise InvalidQuery("near query requires coordinates")
    try:
        pair = json.loads(coords_raw)
    except json.JSONDecodeError as exc:
        raise InvalidQuery(f"bad coordinates {coords_raw!r}") from exc
    return GeoPoint.from_coordinates(pair), max_distance


def _forbidden(detail: str) -> Response:
    return Response(403, {"error": "Forbidden", "detail": detail})


class BrokerHttp:
    def __init__(self, core: BrokerCore, name: str = "broker", host: str = "127.0.0.1", port: int = 0):
        self.core = core
        self.service = HttpService(
            name,
            [
                route("POST", r"/ngsi-ld/v1/entities", self.create_entity),
                route("GET", r"/ngsi-ld/v1/entities", self.query),
                route("PATCH", r"/ngsi-ld/v1/entities/(?P<entity_id>.+)/attrs", self.patch_attrs),
                route("GET", r"/ngsi-ld/v1/entities/(?P<entity_id>[^/]+)", self.get_entity),
                route("DELETE", r"/ngsi-ld/v1/entities/(?P<entity_id>[^/]+)", self.delete_entity),
                route("POST", r"/ngsi-ld/v1/subscriptions", self.create_subscription),
                route("GET", r"/ngsi-ld/v1/subscriptions", self.list_subscriptions),
                route("GET", r"/ngsi-ld/v1/subscriptions/(?P<sub_id>[^/]+)", self.get_subscription),
            ],
            host=host,
            port=port,
        )

    # type-scope check shared by all entity routes
    def _scope_violation(self, request: Request, entity_type: str) -> Response | None:
        client = request.headers.get(AUTH_CLIENT_HEADER)
        allowed = self.core.allowed_types(client)
        if allowed is not None and entity_type not in allowed:
            return _forbidden(f"client {client!r} is not scoped to type {entity_type!r}")
        return None

    def create_entity(self, request: Request) -> Response:
        entity = entity_from_document(request.json())
        denied = self._scope_violation(request, entity.entity_type)
        if denied:
            return denied
        entity_id = self.core.create_entity(entity)
        return Response(201, {"id": entity_id}, headers={"Location": f"/ngsi-ld/v1/entities/{entity_id}"})

    def get_entity(self, request: Request, entity_id: str) -> Response:
        representation = "simplified" if request.param("options") == "keyValues" else "normalized"
        doc = self.core.get_entity(entity_id, representation)
        denied = self._scope_violation(request, doc["type"])
        if denied:
            return denied
        return Response(200, doc)

    def patch_attrs(self, request: Request, entity_id: str) -> Response:
        entity = self.core.get_entity_object(entity_id)
        denied = self._scope_violation(request, entity.entity_type)
        if denied:
            return denied
        patch = attributes_from_patch(request.json())
        self.core.update_attributes(entity_id, patch)
        return Response(204)

    def delete_entity(self, request: Request, entity_id: str) -> Response:
        entity = self.core.get_entity_object(entity_id)
        denied = self._scope_violation(request, entity.entity_type)
        if denied:
            return denied
        self.core.delete_entity(entity_id)
        return Response(204)

    def query(self, request: Request) -> Response:
        type_filter = request.param("type")
        client = request.headers.get(AUTH_CLIENT_HEADER)
        allowed = self.core.allowed_types(client)
        if type_filter is not None and allowed is not None and type_filter not in allowed:
            return _forbidden(f"client {client!r} is not scoped to type {type_filter!r}")
        predicates = parse_q(request.param("q", "") or "")
        near = _parse_near(request)
        entities = self.core.query_entities(type_filter, predicates, near)
        if allowed is not None:
            entities = [e for e in entities if e.entity_type in allowed]
        representation = "simplified" if request.param("options") == "keyValues" else "normalized"
        docs = [self.core.get_entity(e.id, representation) for e in entities if self.core.has_entity(e.id)]
        return Response(200, docs)

    def create_subscription(self, request: Request) -> Response:
        doc = request.json()
        if not isinstance(doc, dict):
            raise InvalidSubscription("subscription body must be a JSON object")
        type_filter = doc.get("entityTypeFilter")
        if type_filter is None:
            entities = doc.get("entities") or []
            if entities and isinstance(entities[0], dict):
                type_filter = entities[0].get("type")
        if not type_filter:
            raise InvalidSubscription("subscription needs an entity type filter")
        denied = self._scope_violation(request, type_filter)
        if denied:
            return denied
        notification = doc.get("notification") or {}
        endpoint = notification.get("endpoint")
        if isinstance(endpoint, dict):
            endpoint = endpoint.get("uri")
        if endpoint is None:
            endpoint = doc.get("endpoint")
        sub = Subscription(
            id=doc.get("id", ""),
            entity_type_filter=type_filter,
            watched_attributes=frozenset(doc.get("watchedAttributes") or ()),
            notification_endpoint=endpoint or "",
            status=doc.get("status", "active"),
        )
        sub_id = self.core.create_subscription(sub)
        return Response(201, {"id": sub_id})

    def _sub_doc(self, sub) -> dict:
        return {
            "id": sub.id,
            "entityTypeFilter": sub.entity_type_filter,
            "watchedAttributes": sorted(sub.watched_attributes),
            "endpoint": sub.notification_endpoint,
            "status": sub.status,
            "deliveriesAttempted": sub.deliveries_attempted,
            "deliveriesSucceeded": sub.deliveries_succeeded,
        }

    def list_subscriptions(self, request: Request) -> Response:
        return Response(200, [self._sub_doc(s) for s in self.core.list_subscriptions()])

    def get_subscription(self, request: Request, sub_id: str) -> Response:
        return Response(200, self._sub_doc(self.core.subscription(sub_id)))

    def start(self):
        self.service.start()
        return self

    def stop(self):
        self.service.stop()

    @property
    def url(self) -> str:
        return self.service.url
