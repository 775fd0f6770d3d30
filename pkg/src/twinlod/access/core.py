"""Client-credential tokens and verb/path authorization.

Tokens are opaque random strings resolved by server-side lookup; policies
are allow rules over an HTTP verb and a path pattern. Absence of a matching
policy denies (default-deny).
"""

from __future__ import annotations

import secrets
import threading
from dataclasses import dataclass
from typing import Any, Callable, Iterable

from twinlod.errors import InvalidConfig, InvalidCredentials
from twinlod.timeutil import utc_now_ms

VERBS = {"GET", "POST", "PATCH", "DELETE"}
DENY_NO_TOKEN = "no_token"
DENY_EXPIRED = "expired"
DENY_NO_POLICY = "no_policy"


@dataclass(frozen=True)
class ClientCredential:
    client_id: str
    client_secret: str
    roles: frozenset[str] = frozenset()

    def __post_init__(self):
        if not self.client_id or not self.client_secret:
            raise InvalidConfig("client needs a non-empty id and secret")
        object.__setattr__(self, "roles", frozenset(self.roles))


@dataclass(frozen=True)
class Policy:
    role: str
    verb: str
    path_pattern: str
    effect: str = "allow"

    def __post_init__(self):
        if self.verb not in VERBS:
            raise InvalidConfig(f"unsupported verb {self.verb!r}")
        if self.effect != "allow":
            raise InvalidConfig("only 'allow' policies exist; absence denies")
        if not self.path_pattern.startswith("/"):
            raise InvalidConfig("path pattern must start with '/'")


@dataclass(frozen=True)
class Token:
    value: str
    client_id: str
    issued_at: int  # epoch ms
    expires_at: int  # epoch ms

    def __post_init__(self):
        if len(self.value) < 32:
            raise InvalidConfig("token values carry at least 32 characters")
        if self.expires_at <= self.issued_at:
            raise InvalidConfig("token must expire strictly after issuance")


@dataclass(frozen=True)
class Decision:
    allowed: bool
    reason: str | None = None  # no_token | expired | no_policy
    client_id: str | None = None


def match_path(pattern: str, path: str) -> bool:
    """Segment-wise pattern match.

    `*` as a whole segment matches exactly one non-empty segment. A trailing
    segment `prefix*` (non-empty prefix) matches everything that remains of
    the path, so `/v1/entities*` covers `/v1/entities`, `/v1/entities/urn:x`,
    and `/v1/entities/urn:x/attrs`. Query strings never participate.
    """
    path = path.split("?", 1)[0]
    pattern_parts = pattern.split("/")
    path_parts = path.split("/")
    for i, part in enumerate(pattern_parts):
        is_last = i == len(pattern_parts) - 1
        if is_last and part != "*" and part.endswith("*"):
            rest = "/".join(path_parts[i:])
            return rest.startswith(part[:-1])
        if i >= len(path_parts):
            return False
        if part == "*":
            if path_parts[i] == "":
                return False
            continue
        if part != path_parts[i]:
            return False
    return len(path_parts) == len(pattern_parts)


class AccessControl:
    """Token issuance plus the authorize() decision procedure.

    Reads are lock-free on immutable snapshots; policy replacement swaps
    the whole table atomically.
    """

    def __init__(
        self,
        clients: Iterable[ClientCredential] = (),
        policies: Iterable[Policy] = (),
        token_ttl_s: float = 3600.0,
        clock: Callable[[], int] = utc_now_ms,
    ):
        self._clients = {c.client_id: c for c in clients}
        self._policies: tuple[Policy, ...] = tuple(policies)
        self.token_ttl_s = token_ttl_s
        self.clock = clock
        self._tokens: dict[str, Token] = {}
        self._lock = threading.Lock()

    # --- clients and policies ---

    def add_client(self, credential: ClientCredential) -> None:
        with self._lock:
            self._clients = {**self._clients, credential.client_id: credential}

    def replace_policies(self, policies: Iterable[Policy]) -> None:
        table = tuple(policies)
        with self._lock:
            self._policies = table

    def add_policy(self, policy: Policy) -> None:
        with self._lock:
            self._policies = self._policies + (policy,)

    @property
    def policies(self) -> tuple[Policy, ...]:
        return self._policies

    # --- tokens ---

    def issue_token(self, client_id: str, client_secret: str) -> Token:
        client = self._clients.get(client_id)
        if client is None or not secrets.compare_digest(client.client_secret, client_secret):
            raise InvalidCredentials("unknown client or wrong secret")
        now = self.clock()
        token = Token(
            value=secrets.token_urlsafe(32),
            client_id=client_id,
            issued_at=now,
            expires_at=now + int(self.token_ttl_s * 1000),
        )
        with self._lock:
            self._tokens[token.value] = token
        return token

    def resolve_token(self, value: str | None) -> Token | None:
        if not value:
            return None
        return self._tokens.get(value)

    # --- authorization ---

    def authorize(self, token_value: str | None, verb: str, path: str) -> Decision:
        token = self.resolve_token(token_value)
        if token is None:
            return Decision(False, DENY_NO_TOKEN)
        if self.clock() >= token.expires_at:
            return Decision(False, DENY_EXPIRED, token.client_id)
        client = self._clients.get(token.client_id)
        roles = client.roles if client else frozenset()
        for policy in self._policies:
            if policy.role in roles and policy.verb == verb.upper() and match_path(policy.path_pattern, path):
                return Decision(True, None, token.client_id)
        return Decision(False, DENY_NO_POLICY, token.client_id)


def clients_from_json(docs: Any) -> list[ClientCredential]:
    if not isinstance(docs, list):
        raise InvalidConfig("client config must be a JSON list")
    return [
        ClientCredential(
            client_id=doc["clientId"],
            client_secret=doc["clientSecret"],
            roles=frozenset(doc.get("roles", ())),
        )
        for doc in docs
    ]


def policies_from_json(docs: Any) -> list[Policy]:
    if not isinstance(docs, list):
        raise InvalidConfig("policy config must be a JSON list")
    return [
        Policy(
            role=doc["role"],
            verb=doc["verb"],
            path_pattern=doc["pathPattern"],
            effect=doc.get("effect", "allow"),
        )
        for doc in docs
    ]
