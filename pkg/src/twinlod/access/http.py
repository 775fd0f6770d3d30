"""Token endpoint plus policy enforcement proxy on one listening port.

`POST /oauth/token` is answered locally; every other request is authorized
against the policy table and, when allowed, forwarded to the configured
upstream with an `X-Auth-Client` header naming the authenticated client.
"""

from __future__ import annotations

from urllib.parse import parse_qs

import requests

from twinlod.access.core import (
    DENY_NO_POLICY,
    AccessControl,
)
from twinlod.broker.http import AUTH_CLIENT_HEADER
from twinlod.errors import UpstreamUnavailable
from twinlod.httpkit import HttpService, Request, Response, route

_FORWARDED_RESPONSE_HEADERS = ("location",)
_HOP_HEADERS = {"host", "content-length", "connection", "authorization", AUTH_CLIENT_HEADER}


class AccessHttp:
    def __init__(
        self,
        control: AccessControl,
        upstream_url: str,
        name: str = "access",
        host: str = "127.0.0.1",
        port: int = 0,
        http_timeout_s: float = 10.0,
    ):
        self.control = control
        self.upstream_url = upstream_url.rstrip("/")
        self.http_timeout_s = http_timeout_s
        self._session = requests.Session()
        forward = self.forward
        self.service = HttpService(
            name,
            [
                route("POST", r"/oauth/token", self.issue_token),
                route("GET", r".*", forward),
                route("POST", r".*", forward),
                route("PATCH", r".*", forward),
                route("DELETE", r".*", forward),
            ],
            host=host,
            port=port,
        )

    def issue_token(self, request: Request) -> Response:
        form = parse_qs(request.body.decode("utf-8"))
        grant = (form.get("grant_type") or [""])[0]
        if grant != "client_credentials":
            return Response(400, {"error": "unsupported grant_type"})
        client_id = (form.get("client_id") or [""])[0]
        client_secret = (form.get("client_secret") or [""])[0]
        token = self.control.issue_token(client_id, client_secret)
        return Response(
            200,
            {"access_token": token.value, "expires_in": int(self.control.token_ttl_s)},
        )

    def forward(self, request: Request) -> Response:
        decision = self.control.authorize(request.bearer_token(), request.method, request.path)
        if not decision.allowed:
            status = 403 if decision.reason == DENY_NO_POLICY else 401
            return Response(status, {"error": decision.reason})
        headers = {k: v for k, v in request.headers.items() if k not in _HOP_HEADERS}
        headers[AUTH_CLIENT_HEADER] = decision.client_id or ""
        try:
            upstream = self._session.request(
                request.method,
                self.upstream_url + request.raw_target,
                data=request.body or None,
                headers=headers,
                timeout=self.http_timeout_s,
            )
        except requests.RequestException as exc:
            raise UpstreamUnavailable(str(exc)) from exc
        passthrough = {
            k.title(): v
            for k, v in upstream.headers.items()
            if k.lower() in _FORWARDED_RESPONSE_HEADERS
        }
        return Response(
            upstream.status_code,
            upstream.content,
            content_type=upstream.headers.get("Content-Type"),
            headers=passthrough,
        )
