"""In-memory context broker: current entity state plus publish-subscribe.

The broker keeps only the current state of each entity; history lives
downstream in the dataflow engine. Mutations on the same entity id are
serialized at operation granularity behind one lock, entities themselves
are immutable snapshots, so readers never observe a torn entity.
Subscription matching runs synchronously with the mutation; delivery is
handed to the dispatcher and never blocks the mutator.

An update that rewrites an attribute with an identical value still counts
as touching it: subscribers are notified on every write, not only on
value changes.
"""

from __future__ import annotations

import itertools
import threading
from dataclasses import dataclass
from typing import Any, Callable, Iterable

from ..errors import (
    AlreadyExists,
    InvalidEntity,
    InvalidQuery,
    InvalidSubscription,
    NotFound,
)
from ..geo import GeoPoint, haversine_m
from ..timeutil import utc_now_ms
from .dispatch import NotificationDispatcher
from .model import (
    Attribute,
    AttributeKind,
    Entity,
    Notification,
    Subscription,
    parse_urn,
    to_normalized,
    to_simplified,
    validate_endpoint,
)

_QUERY_OPS: dict[str, Callable[[Any, Any], bool]] = {
    "==": lambda a, b: a == b,
    "<": lambda a, b: a < b,
    ">": lambda a, b: a > b,
    "<=": lambda a, b: a <= b,
    ">=": lambda a, b: a >= b,
}


@dataclass(frozen=True)
class Predicate:
    attribute: str
    op: str
    literal: Any

    def __post_init__(self):
        if self.op not in _QUERY_OPS:
            raise InvalidQuery(f"unknown operator {self.op!r}")


def _comparable(a: Any, b: Any) -> bool:
    if isinstance(a, bool) or isinstance(b, bool):
        return isinstance(a, bool) and isinstance(b, bool)
    if isinstance(a, (int, float)) and isinstance(b, (int, float)):
        return True
    return type(a) is type(b)


class BrokerCore:
    def __init__(
        self,
        name: str = "broker",
        dispatcher: NotificationDispatcher | None = None,
        clock: Callable[[], int] = utc_now_ms,
        type_scopes: dict[str, set[str]] | None = None,
    ):
        self.name = name
        self.dispatcher = dispatcher or NotificationDispatcher()
        self.clock = clock
        #: per authenticated client: the entity types it may touch via the
        #: proxy; clients without an entry are unrestricted.
        self.type_scopes = {k: set(v) for k, v in (type_scopes or {}).items()}
        self._lock = threading.RLock()
        self._entities: dict[str, Entity] = {}
        self._subscriptions: dict[str, Subscription] = {}
        self._last_fired: dict[str, int] = {}
        self._sub_seq = itertools.count(1)
        self.notifications_generated = 0

    # --- entities ---

    def create_entity(self, entity: Entity) -> str:
        with self._lock:
            if entity.id in self._entities:
                raise AlreadyExists(entity.id)
            self._entities[entity.id] = entity
        self.evaluate_and_dispatch(entity, set(entity.attributes))
        return entity.id

    def update_attributes(self, entity_id: str, patch: dict[str, Attribute]) -> set[str]:
        with self._lock:
            current = self._entities.get(entity_id)
            if current is None:
                raise NotFound(entity_id)
            if not patch:
                return set()
            updated = current.with_attributes(patch)
            self._entities[entity_id] = updated
        touched = set(patch)
        self.evaluate_and_dispatch(updated, touched)
        return touched

    def get_entity(self, entity_id: str, representation: str = "normalized") -> dict:
        entity = self.get_entity_object(entity_id)
        if representation == "simplified":
            return to_simplified(entity)
        if representation == "normalized":
            return to_normalized(entity)
        raise InvalidQuery(f"unknown representation {representation!r}")

    def get_entity_object(self, entity_id: str) -> Entity:
        with self._lock:
            entity = self._entities.get(entity_id)
        if entity is None:
            raise NotFound(entity_id)
        return entity

    def has_entity(self, entity_id: str) -> bool:
        with self._lock:
            return entity_id in self._entities

    def delete_entity(self, entity_id: str) -> None:
        with self._lock:
            if entity_id not in self._entities:
                raise NotFound(entity_id)
            del self._entities[entity_id]

    def list_entities(self) -> list[Entity]:
        with self._lock:
            return list(self._entities.values())

    def query_entities(
        self,
        type_filter: str | None = None,
        predicates: Iterable[Predicate] = (),
        near: tuple[GeoPoint, float] | None = None,
    ) -> list[Entity]:
        predicates = list(predicates)
        candidates = self.list_entities()
        result = [e for e in candidates if self._matches(e, type_filter, predicates)]
        if near is None:
            result.sort(key=lambda e: e.id)
            return result
        center, max_distance = near
        with_distance = []
        for e in result:
            loc = e.location
            if loc is None:
                continue
            d = haversine_m(center, loc)
            if d <= max_distance:
                with_distance.append((d, e.id, e))
        with_distance.sort(key=lambda t: (t[0], t[1]))
        return [e for _, _, e in with_distance]

    @staticmethod
    def _matches(entity: Entity, type_filter: str | None, predicates: list[Predicate]) -> bool:
        if type_filter is not None and entity.entity_type != type_filter:
            return False
        for pred in predicates:
            attr = entity.attributes.get(pred.attribute)
            if attr is None or attr.kind is AttributeKind.GEO_PROPERTY:
                return False
            if not _comparable(attr.value, pred.literal):
                return False
            if not _QUERY_OPS[pred.op](attr.value, pred.literal):
                return False
        return True

    # --- subscriptions ---

    def create_subscription(self, subscription: Subscription) -> str:
        validate_endpoint(subscription.notification_endpoint)
        with self._lock:
            if not subscription.id:
                subscription.id = f"urn:ngsi-ld:Subscription:{self.name}-{next(self._sub_seq)}"
            elif subscription.id in self._subscriptions:
                raise InvalidSubscription(f"duplicate subscription id {subscription.id}")
            else:
                parse_urn(subscription.id)
            self._subscriptions[subscription.id] = subscription
        return subscription.id

    def subscribe(
        self,
        entity_type: str,
        watched: Iterable[str] = (),
        endpoint: str = "",
    ) -> str:
        """Convenience wrapper used by in-process subscribers."""
        return self.create_subscription(
            Subscription(
                id="",
                entity_type_filter=entity_type,
                watched_attributes=frozenset(watched),
                notification_endpoint=endpoint,
            )
        )

    def subscription(self, sub_id: str) -> Subscription:
        with self._lock:
            sub = self._subscriptions.get(sub_id)
        if sub is None:
            raise NotFound(sub_id)
        return sub

    def list_subscriptions(self) -> list[Subscription]:
        with self._lock:
            return list(self._subscriptions.values())

    # --- notification pipeline ---

    def evaluate_and_dispatch(self, entity: Entity, touched: set[str]) -> list[Notification]:
        """Match one committed change against the subscription table.

        Returns the generated notifications; their delivery happens on the
        dispatcher's worker pool with per-subscription attempt counters.
        """
        if not touched:
            return []
        fired: list[Notification] = []
        with self._lock:
            for sub in self._subscriptions.values():
                if not sub.matches(entity.entity_type, touched):
                    continue
                now = self.clock()
                # strictly increasing per subscription so (id, notifiedAt)
                # is a usable idempotency key downstream
                last = self._last_fired.get(sub.id, -1)
                fired_at = max(now, last + 1)
                self._last_fired[sub.id] = fired_at
                fired.append(
                    Notification(
                        subscription_id=sub.id,
                        fired_at=fired_at,
                        entities=(entity,),
                        entity_type_filter=sub.entity_type_filter,
                    )
                )
            self.notifications_generated += len(fired)
        for notification in fired:
            sub_id = notification.subscription_id
            endpoint = self._subscriptions[sub_id].notification_endpoint
            self.dispatcher.submit(
                endpoint,
                notification.to_wire(),
                on_attempt=lambda ok, sid=sub_id: self._record_attempt(sid, ok),
            )
        return fired

    def _record_attempt(self, sub_id: str, ok: bool) -> None:
        with self._lock:
            sub = self._subscriptions.get(sub_id)
            if sub is None:
                return
            sub.deliveries_attempted += 1
            if ok:
                sub.deliveries_succeeded += 1

    def drain(self, timeout_s: float = 30.0) -> bool:
        """Wait until all queued notification deliveries have settled."""
        return self.dispatcher.wait_idle(timeout_s)

    # --- per-client type scope (enforced at the HTTP boundary) ---

    def allowed_types(self, client_id: str | None) -> set[str] | None:
        """Types the client may touch, or None when unrestricted."""
        if client_id is None:
            return None
        return self.type_scopes.get(client_id)
