"""Stack configuration: one document describing every service.

A StackConfig names the bind host, the six service ports (access
gateway, two brokers, portal, device gateway, event relay), the token
TTL, and the credential/policy/model files the services load at startup.
Values come from a JSON file, with `TWINLOD_*` environment variables
overriding individual fields so a deployment can retune ports or paths
without editing the file.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, fields, replace
from pathlib import Path
from typing import Any, Mapping

from .errors import ConfigError

ENV_PREFIX = "TWINLOD_"

# config key -> environment variable suffix; every override is ENV_PREFIX + suffix
_ENV_KEYS = {
    "host": "HOST",
    "access_port": "ACCESS_PORT",
    "broker_parking_port": "BROKER_PARKING_PORT",
    "broker_urban_port": "BROKER_URBAN_PORT",
    "odp_port": "ODP_PORT",
    "iot_agent_port": "IOT_AGENT_PORT",
    "relay_port": "RELAY_PORT",
    "token_ttl_s": "TOKEN_TTL_S",
    "harvest_period_s": "HARVEST_PERIOD_S",
    "max_data_age_s": "MAX_DATA_AGE_S",
    "clients_path": "CLIENTS_PATH",
    "policies_path": "POLICIES_PATH",
    "models_path": "MODELS_PATH",
    "publication_graph_path": "PUBLICATION_GRAPH_PATH",
    "scenario_path": "SCENARIO_PATH",
    "app_dir": "APP_DIR",
    "data_dir": "DATA_DIR",
    "log_level": "LOG_LEVEL",
}

_PORT_FIELDS = (
    "access_port",
    "broker_parking_port",
    "broker_urban_port",
    "odp_port",
    "iot_agent_port",
    "relay_port",
)

_PATH_FIELDS = ("clients_path", "policies_path", "models_path", "publication_graph_path", "scenario_path")


@dataclass(frozen=True)
class StackConfig:
    clients_path: Path
    policies_path: Path
    host: str = "127.0.0.1"
    access_port: int = 8100
    broker_parking_port: int = 8101
    broker_urban_port: int = 8102
    odp_port: int = 8103
    iot_agent_port: int = 8104
    relay_port: int = 8105
    token_ttl_s: float = 3600.0
    harvest_period_s: float = 2.0
    max_data_age_s: float = 60.0
    models_path: Path | None = None
    publication_graph_path: Path | None = None
    scenario_path: Path | None = None
    app_dir: Path | None = None
    data_dir: Path = Path("data")
    log_level: str = "INFO"

    def __post_init__(self):
        for name in ("clients_path", "policies_path", "data_dir"):
            object.__setattr__(self, name, Path(getattr(self, name)))
        for name in ("models_path", "publication_graph_path", "scenario_path", "app_dir"):
            value = getattr(self, name)
            if value is not None:
                object.__setattr__(self, name, Path(value))
        self._validate()

    def _validate(self) -> None:
        ports = [getattr(self, name) for name in _PORT_FIELDS]
        for name, port in zip(_PORT_FIELDS, ports):
            if not isinstance(port, int) or not (0 <= port <= 65535):
                raise ConfigError(f"{name} must be a port number, got {port!r}")
        fixed = [p for p in ports if p != 0]
        if len(fixed) != len(set(fixed)):
            dupes = sorted({p for p in fixed if fixed.count(p) > 1})
            raise ConfigError(f"ports must be distinct; duplicated: {dupes}")
        for name in ("token_ttl_s", "harvest_period_s", "max_data_age_s"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be positive")
        for name in _PATH_FIELDS:
            path = getattr(self, name)
            if path is not None and not path.is_file():
                raise ConfigError(f"{name} does not exist: {path}")
        if self.app_dir is not None and not self.app_dir.is_dir():
            raise ConfigError(f"app_dir does not exist: {self.app_dir}")

    # --- loading ---

    @classmethod
    def from_document(
        cls,
        doc: Mapping[str, Any],
        *,
        base_dir: Path | None = None,
        env: Mapping[str, str] | None = None,
    ) -> "StackConfig":
        if not isinstance(doc, Mapping):
            raise ConfigError("stack config must be a JSON object")
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(doc) - known)
        if unknown:
            raise ConfigError(f"unknown stack config keys: {unknown}")
        values: dict[str, Any] = dict(doc)
        values.update(_env_overrides(env if env is not None else os.environ))
        missing = [k for k in ("clients_path", "policies_path") if k not in values]
        if missing:
            raise ConfigError(f"stack config lacks required keys: {missing}")
        if base_dir is not None:
            for name in (*_PATH_FIELDS, "app_dir", "data_dir"):
                if values.get(name) is not None and name in values:
                    values[name] = _resolve(base_dir, values[name])
        try:
            return cls(**_coerced(values))
        except TypeError as exc:
            raise ConfigError(f"malformed stack config: {exc}") from exc

    @classmethod
    def from_file(cls, path: str | Path, env: Mapping[str, str] | None = None) -> "StackConfig":
        path = Path(path)
        try:
            doc = json.loads(path.read_text("utf-8"))
        except OSError as exc:
            raise ConfigError(f"cannot read stack config {path}: {exc}") from exc
        except json.JSONDecodeError as exc:
            raise ConfigError(f"stack config {path} is not valid JSON: {exc}") from exc
        return cls.from_document(doc, base_dir=path.parent, env=env)

    def with_ephemeral_ports(self) -> "StackConfig":
        """A copy with every port set to 0 (bind-time allocation); used by tests."""
        return replace(self, **{name: 0 for name in _PORT_FIELDS})


def _resolve(base_dir: Path, value: Any) -> str:
    path = Path(str(value))
    return str(path if path.is_absolute() else base_dir / path)


def _coerced(values: dict[str, Any]) -> dict[str, Any]:
    out = dict(values)
    for name in _PORT_FIELDS:
        if name in out:
            try:
                out[name] = int(out[name])
            except (TypeError, ValueError) as exc:
                raise ConfigError(f"{name} must be an integer: {out[name]!r}") from exc
    for name in ("token_ttl_s", "harvest_period_s", "max_data_age_s"):
        if name in out:
            try:
                out[name] = float(out[name])
            except (TypeError, ValueError) as exc:
                raise ConfigError(f"{name} must be a number: {out[name]!r}") from exc
    return out


def _env_overrides(env: Mapping[str, str]) -> dict[str, Any]:
    overrides: dict[str, Any] = {}
    for name, suffix in _ENV_KEYS.items():
        raw = env.get(ENV_PREFIX + suffix)
        if raw is not None and raw != "":
            overrides[name] = raw
    return overrides
