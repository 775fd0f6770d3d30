"""Local registry of entity model shapes used for homogenization.

Each model declares mandatory and optional attributes with a small type
language: geo, integer, number, string, boolean, plus optional `enum` and
`minimum` refinements. Validation is hermetic; no schema is fetched.
"""

from __future__ import annotations

import json
from pathlib import Path
from typing import Any

from twinlod.errors import InvalidConfig
from twinlod.geo import GeoPoint

DEFAULT_MODELS: dict[str, Any] = {
    "OffStreetParking": {
        "mandatory": {
            "location": {"type": "geo"},
            "availableSpotNumber": {"type": "integer", "minimum": 0},
        },
        "optional": {
            "name": {"type": "string"},
            "totalSpotNumber": {"type": "integer", "minimum": 0},
            "category": {"type": "string"},
        },
    },
    "ParkingSpot": {
        "mandatory": {
            "location": {"type": "geo"},
            "status": {"type": "string", "enum": ["free", "occupied", "closed"]},
        },
        "optional": {"name": {"type": "string"}},
    },
    "Vehicle": {
        "mandatory": {"location": {"type": "geo"}},
        "optional": {
            "speed": {"type": "number", "minimum": 0},
            "category": {"type": "string"},
            "refParkingSpot": {"type": "urn"},
        },
    },
}


def _check_type(name: str, value: Any, decl: dict[str, Any]) -> str | None:
    kind = decl.get("type", "string")
    if kind == "geo":
        if not isinstance(value, dict) or value.get("type") != "Point":
            return f"{name}: expected a GeoJSON Point"
        coords = value.get("coordinates")
        if not isinstance(coords, list) or len(coords) != 2:
            return f"{name}: Point needs [lat, lon]"
        try:
            GeoPoint.from_coordinates(coords)
        except Exception:
            return f"{name}: coordinates out of range"
        return None
    if kind == "integer":
        if isinstance(value, bool) or not isinstance(value, int):
            return f"{name}: expected an integer, got {type(value).__name__}"
    elif kind == "number":
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            return f"{name}: expected a number, got {type(value).__name__}"
    elif kind == "boolean":
        if not isinstance(value, bool):
            return f"{name}: expected a boolean"
    elif kind == "string":
        if not isinstance(value, str):
            return f"{name}: expected a string, got {type(value).__name__}"
    elif kind == "urn":
        if not isinstance(value, str) or not value.startswith("urn:ngsi-ld:"):
            return f"{name}: expected an entity URN"
    else:
        return f"{name}: unknown declared type {kind!r}"
    if "enum" in decl and value not in decl["enum"]:
        return f"{name}: {value!r} not in {decl['enum']}"
    if "minimum" in decl and isinstance(value, (int, float)) and value < decl["minimum"]:
        return f"{name}: {value} below minimum {decl['minimum']}"
    return None


class ModelRegistry:
    def __init__(self, models: dict[str, Any] | None = None):
        self.models = models if models is not None else DEFAULT_MODELS
        for model_name, decl in self.models.items():
            if "mandatory" not in decl:
                raise InvalidConfig(f"model {model_name!r} lacks a mandatory section")

    @classmethod
    def from_file(cls, path: str | Path) -> "ModelRegistry":
        try:
            return cls(json.loads(Path(path).read_text("utf-8")))
        except (OSError, ValueError) as exc:
            raise InvalidConfig(f"cannot load model registry {path}: {exc}") from exc

    def has_model(self, entity_type: str) -> bool:
        return entity_type in self.models

    def attribute_declarations(self, entity_type: str) -> dict[str, dict[str, Any]]:
        decl = self.models.get(entity_type)
        if decl is None:
            raise InvalidConfig(f"no model for entity type {entity_type!r}")
        return {**decl.get("mandatory", {}), **decl.get("optional", {})}

    def mandatory_attributes(self, entity_type: str) -> set[str]:
        decl = self.models.get(entity_type)
        if decl is None:
            raise InvalidConfig(f"no model for entity type {entity_type!r}")
        return set(decl.get("mandatory", {}))

    def validate(self, doc: dict[str, Any]) -> list[str]:
        """Return problems for a simplified entity document; empty = valid."""
        problems: list[str] = []
        entity_type = doc.get("type", "")
        if entity_type not in self.models:
            return [f"unknown model {entity_type!r}"]
        declared = self.attribute_declarations(entity_type)
        for name in self.mandatory_attributes(entity_type):
            if name not in doc:
                problems.append(f"missing mandatory attribute {name!r}")
        for name, value in doc.items():
            if name in ("id", "type", "@context"):
                continue
            decl = declared.get(name)
            if decl is None:
                problems.append(f"attribute {name!r} not in the {entity_type} model")
                continue
            problem = _check_type(name, value, decl)
            if problem:
                problems.append(problem)
        return problems

    def is_valid(self, doc: dict[str, Any]) -> bool:
        return not self.validate(doc)
