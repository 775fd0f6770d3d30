"""Action-API HTTP surface for the portal.

Responses use the `{"success": bool, "result"/"error": ...}` envelope.
Write actions demand a bearer token authorized for the request verb and
path; reads stay public (the catalog is open data).
"""

from __future__ import annotations

import json
from typing import Any

from twinlod.access.core import DENY_NO_POLICY, AccessControl
from twinlod.errors import Forbidden, Unauthorized
from twinlod.httpkit import ERROR_STATUS, HttpService, Request, Response, route
from twinlod.odp.dcat import render_dcat
from twinlod.odp.portal import CatalogMetadata, Portal


def envelope(result: Any) -> dict[str, Any]:
    return {"success": True, "result": result}


def error_envelope(exc: Exception) -> Response:
    if isinstance(exc, json.JSONDecodeError):
        status = 400
    else:
        status = ERROR_STATUS.get(type(exc), 500)
    return Response(
        status,
        {"success": False, "error": {"__type": type(exc).__name__, "message": str(exc)}},
    )


class PortalHttp:
    def __init__(
        self,
        portal: Portal,
        control: AccessControl | None = None,
        name: str = "odp",
        host: str = "127.0.0.1",
        port: int = 0,
    ):
        self.portal = portal
        self.control = control
        self.service = HttpService(
            name,
            [
                route("POST", r"/api/3/action/organization_create", self.organization_create),
                route("POST", r"/api/3/action/package_create", self.package_create),
                route("POST", r"/api/3/action/package_update_metadata", self.package_update_metadata),
                route("POST", r"/api/3/action/resource_create", self.resource_create),
                route("POST", r"/api/3/action/resource_append", self.resource_append),
                route("GET", r"/api/3/action/package_show", self.package_show),
                route("GET", r"/api/3/action/package_search", self.package_search),
                route("GET", r"/datasets/(?P<name>[^/]+)/dcat\.rdf", self.dcat),
                route("GET", r"/datasets/(?P<name>[^/]+)/resources/(?P<resource_id>[^/]+)/rows", self.rows),
            ],
            host=host,
            port=port,
            error_translator=error_envelope,
        )

    @property
    def url(self) -> str:
        return self.service.url

    def _require_write(self, request: Request) -> None:
        if self.control is None:
            return
        decision = self.control.authorize(request.bearer_token(), request.method, request.path)
        if decision.allowed:
            return
        if decision.reason == DENY_NO_POLICY:
            raise Forbidden(DENY_NO_POLICY)
        raise Unauthorized(decision.reason or "denied")

    # --- actions ---

    def organization_create(self, request: Request) -> Response:
        self._require_write(request)
        body = request.json() or {}
        org = self.portal.organization_create(body.get("name", ""), body.get("title", ""))
        return Response(200, envelope(org.to_wire()))

    def package_create(self, request: Request) -> Response:
        self._require_write(request)
        body = request.json() or {}
        metadata = CatalogMetadata(
            description=body.get("notes", ""),
            keywords=tuple(t["name"] for t in body.get("tags", ())),
        )
        dataset = self.portal.package_create(
            name=body.get("name", ""),
            title=body.get("title", ""),
            owner_org=body.get("owner_org", ""),
            metadata=metadata,
        )
        return Response(200, envelope(dataset.to_wire()))

    def package_update_metadata(self, request: Request) -> Response:
        self._require_write(request)
        body = request.json() or {}
        keywords = None
        if "tags" in body:
            keywords = [t["name"] for t in body["tags"]]
        dataset = self.portal.update_metadata(
            body.get("name", ""),
            title=body.get("title"),
            description=body.get("notes"),
            keywords=keywords,
        )
        return Response(200, envelope(dataset.to_wire()))

    def resource_create(self, request: Request) -> Response:
        self._require_write(request)
        body = request.json() or {}
        resource = self.portal.resource_create(
            dataset_name=body.get("package_id", ""),
            resource_id=body.get("id", ""),
            name=body.get("name", ""),
            format=body.get("format", "JSONL"),
            external_url=body.get("url"),
        )
        return Response(200, envelope(resource.to_wire()))

    def resource_append(self, request: Request) -> Response:
        self._require_write(request)
        body = request.json() or {}
        count = self.portal.resource_append(
            body.get("package_id", ""), body.get("id", ""), body.get("row")
        )
        return Response(200, envelope({"count": count}))

    def package_show(self, request: Request) -> Response:
        name = request.param("id") or ""
        return Response(200, envelope(self.portal.package_show(name).to_wire()))

    def package_search(self, request: Request) -> Response:
        q = request.param("q") or ""
        org = request.param("organization")
        keyword = request.param("keyword")
        datasets = self.portal.package_search(q, org=org, keyword=keyword)
        return Response(
            200,
            envelope({"count": len(datasets), "results": [d.to_wire() for d in datasets]}),
        )

    # --- open data endpoints ---

    def dcat(self, request: Request, name: str) -> Response:
        dataset = self.portal.package_show(name)
        xml = render_dcat(dataset, self.service.url)
        return Response(200, xml, content_type="application/rdf+xml")

    def rows(self, request: Request, name: str, resource_id: str) -> Response:
        rows = self.portal.resource_rows(name, resource_id)
        body = "".join(json.dumps(r, separators=(",", ":")) + "\n" for r in rows)
        return Response(200, body, content_type="application/x-ndjson")
