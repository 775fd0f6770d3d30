from .model import (
    Attribute,
    AttributeKind,
    Entity,
    Notification,
    Subscription,
    entity_from_document,
    parse_urn,
    to_normalized,
    to_simplified,
)
from .core import BrokerCore, Predicate
from .dispatch import NotificationDispatcher

__all__ = [
    "Attribute",
    "AttributeKind",
    "BrokerCore",
    "Entity",
    "Notification",
    "NotificationDispatcher",
    "Predicate",
    "Subscription",
    "entity_from_document",
    "parse_urn",
    "to_normalized",
    "to_simplified",
]
