"""Typed HTTP clients for the broker, the portal, and the token endpoint.

Transport failures and HTTP error statuses surface as the package's own
exception types so callers and tests never match on raw status codes.
"""

from __future__ import annotations

import json
from typing import Any

import requests

from twinlod import errors as err

_PORTAL_ERRORS = {
    "Conflict": err.Conflict,
    "InvalidName": err.InvalidName,
    "UnknownOrganization": err.UnknownOrganization,
    "DatasetNotFound": err.DatasetNotFound,
    "ResourceNotFound": err.ResourceNotFound,
    "MetadataOnlyResource": err.MetadataOnlyResource,
}


class BrokerClient:
    def __init__(self, base_url: str, token: str | None = None, timeout_s: float = 10.0):
        self.base_url = base_url.rstrip("/")
        self.token = token
        self.timeout_s = timeout_s
        self._session = requests.Session()

    def _headers(self) -> dict[str, str]:
        return {"Authorization": f"Bearer {self.token}"} if self.token else {}

    def _request(self, method: str, path: str, **kwargs) -> requests.Response:
        try:
            resp = self._session.request(
                method,
                f"{self.base_url}{path}",
                timeout=self.timeout_s,
                headers=self._headers(),
                **kwargs,
            )
        except requests.RequestException as exc:
            raise err.BrokerUnavailable(str(exc)) from exc
        if resp.status_code in (401, 403):
            raise err.Unauthorized(f"{method} {path}: {resp.status_code} {resp.text}")
        if resp.status_code == 404:
            raise err.NotFound(f"{method} {path}")
        if resp.status_code == 409:
            raise err.AlreadyExists(f"{method} {path}")
        if resp.status_code == 400:
            raise err.InvalidEntity(f"{method} {path}: {resp.text}")
        if resp.status_code >= 500:
            raise err.BrokerUnavailable(f"{method} {path}: {resp.status_code}")
        return resp

    def create_entity(self, doc: dict[str, Any]) -> str:
        return self._request("POST", "/ngsi-ld/v1/entities", json=doc).json()["id"]

    def get_entity(self, entity_id: str, simplified: bool = True) -> dict[str, Any]:
        params = {"options": "keyValues"} if simplified else {}
        return self._request("GET", f"/ngsi-ld/v1/entities/{entity_id}", params=params).json()

    def has_entity(self, entity_id: str) -> bool:
        try:
            self.get_entity(entity_id)
            return True
        except err.NotFound:
            return False

    def patch_attributes(self, entity_id: str, attrs: dict[str, Any]) -> None:
        self._request("PATCH", f"/ngsi-ld/v1/entities/{entity_id}/attrs", json=attrs)

    def delete_entity(self, entity_id: str) -> None:
        self._request("DELETE", f"/ngsi-ld/v1/entities/{entity_id}")

    def query(
        self,
        entity_type: str | None = None,
        q: str | None = None,
        near: tuple[float, float, float] | None = None,
        simplified: bool = True,
    ) -> list[dict[str, Any]]:
        params: dict[str, str] = {}
        if simplified:
            params["options"] = "keyValues"
        if entity_type:
            params["type"] = entity_type
        if q:
            params["q"] = q
        if near is not None:
            lat, lon, max_distance_m = near
            params["georel"] = f"near;maxDistance=={max_distance_m:g}"
            params["geometry"] = "Point"
            params["coordinates"] = json.dumps([lat, lon])
        return self._request("GET", "/ngsi-ld/v1/entities", params=params).json()

    def subscribe(
        self,
        entity_type: str,
        watched: list[str] | None = None,
        endpoint: str = "",
    ) -> str:
        body: dict[str, Any] = {
            "entityTypeFilter": entity_type,
            "endpoint": endpoint,
        }
        if watched:
            body["watchedAttributes"] = watched
        return self._request("POST", "/ngsi-ld/v1/subscriptions", json=body).json()["id"]

    def subscription(self, sub_id: str) -> dict[str, Any]:
        return self._request("GET", f"/ngsi-ld/v1/subscriptions/{sub_id}").json()

    def health(self) -> bool:
        try:
            return self._request("GET", "/health").json().get("status") == "ok"
        except err.TwinlodError:
            return False


class PortalClient:
    def __init__(self, base_url: str, token: str | None = None, timeout_s: float = 10.0):
        self.base_url = base_url.rstrip("/")
        self.token = token
        self.timeout_s = timeout_s
        self._session = requests.Session()

    def _headers(self) -> dict[str, str]:
        return {"Authorization": f"Bearer {self.token}"} if self.token else {}

    def _call(self, method: str, path: str, **kwargs) -> requests.Response:
        try:
            resp = self._session.request(
                method,
                f"{self.base_url}{path}",
                timeout=self.timeout_s,
                headers=self._headers(),
                **kwargs,
            )
        except requests.RequestException as exc:
            raise err.PortalUnavailable(str(exc)) from exc
        if resp.status_code >= 500:
            raise err.PortalUnavailable(f"{method} {path}: {resp.status_code}")
        return resp

    def _action(self, verb: str, action: str, **kwargs) -> Any:
        resp = self._call(verb, f"/api/3/action/{action}", **kwargs)
        body = resp.json()
        if body.get("success"):
            return body["result"]
        error = body.get("error") or {}
        klass = _PORTAL_ERRORS.get(error.get("__type"))
        if resp.status_code in (401, 403) or error.get("__type") in ("Unauthorized", "Forbidden"):
            raise err.Unauthorized(error.get("message", "denied"))
        if klass is not None:
            raise klass(error.get("message", action))
        raise err.PortalUnavailable(f"{action}: unexpected failure {body!r}")

    def organization_create(self, name: str, title: str) -> dict[str, Any]:
        return self._action("POST", "organization_create", json={"name": name, "title": title})

    def ensure_organization(self, name: str, title: str) -> bool:
        """Create if absent; returns True when this call created it."""
        try:
            self.organization_create(name, title)
            return True
        except err.Conflict:
            return False

    def package_create(
        self,
        name: str,
        title: str,
        owner_org: str,
        description: str = "",
        keywords: list[str] | None = None,
    ) -> dict[str, Any]:
        return self._action(
            "POST",
            "package_create",
            json={
                "name": name,
                "title": title,
                "owner_org": owner_org,
                "notes": description,
                "tags": [{"name": k} for k in (keywords or [])],
            },
        )

    def package_show(self, name: str) -> dict[str, Any]:
        return self._action("GET", "package_show", params={"id": name})

    def has_package(self, name: str) -> bool:
        try:
            self.package_show(name)
            return True
        except err.DatasetNotFound:
            return False

    def package_search(self, q: str = "", **filters: str) -> list[dict[str, Any]]:
        return self._action("GET", "package_search", params={"q": q, **filters})["results"]

    def update_metadata(
        self,
        name: str,
        title: str | None = None,
        description: str | None = None,
        keywords: list[str] | None = None,
    ) -> dict[str, Any]:
        body: dict[str, Any] = {"name": name}
        if title is not None:
            body["title"] = title
        if description is not None:
            body["notes"] = description
        if keywords is not None:
            body["tags"] = [{"name": k} for k in keywords]
        return self._action("POST", "package_update_metadata", json=body)

    def resource_create(
        self,
        dataset_name: str,
        resource_id: str,
        name: str,
        format: str = "JSONL",
        external_url: str | None = None,
    ) -> dict[str, Any]:
        body: dict[str, Any] = {
            "package_id": dataset_name,
            "id": resource_id,
            "name": name,
            "format": format,
        }
        if external_url is not None:
            body["url"] = external_url
        return self._action("POST", "resource_create", json=body)

    def resource_append(self, dataset_name: str, resource_id: str, row: Any) -> int:
        return self._action(
            "POST",
            "resource_append",
            json={"package_id": dataset_name, "id": resource_id, "row": row},
        )["count"]

    def rows(self, dataset_name: str, resource_id: str) -> list[Any]:
        resp = self._call("GET", f"/datasets/{dataset_name}/resources/{resource_id}/rows")
        if resp.status_code != 200:
            try:
                kind = resp.json()["error"]["__type"]
            except (ValueError, KeyError, TypeError):
                kind = ""
            klass = _PORTAL_ERRORS.get(kind, err.PortalUnavailable)
            raise klass(f"{dataset_name}/{resource_id}: {resp.status_code}")
        return [json.loads(line) for line in resp.text.splitlines() if line.strip()]

    def dcat(self, dataset_name: str) -> str:
        resp = self._call("GET", f"/datasets/{dataset_name}/dcat.rdf")
        if resp.status_code == 404:
            raise err.DatasetNotFound(dataset_name)
        return resp.text

    def health(self) -> bool:
        try:
            resp = self._call("GET", "/health")
            return resp.status_code == 200 and resp.json().get("status") == "ok"
        except err.TwinlodError:
            return False


class AuthClient:
    def __init__(self, base_url: str, timeout_s: float = 10.0):
        self.base_url = base_url.rstrip("/")
        self.timeout_s = timeout_s

    def token(self, client_id: str, client_secret: str) -> str:
        try:
            resp = requests.post(
                f"{self.base_url}/oauth/token",
                data={
                    "grant_type": "client_credentials",
                    "client_id": client_id,
                    "client_secret": client_secret,
                },
                timeout=self.timeout_s,
            )
        except requests.RequestException as exc:
            raise err.UpstreamUnavailable(str(exc)) from exc
        if resp.status_code == 401:
            raise err.InvalidCredentials(client_id)
        if resp.status_code != 200:
            raise err.UpstreamUnavailable(f"token endpoint: {resp.status_code}")
        return resp.json()["access_token"]

    def health(self) -> bool:
        try:
            resp = requests.get(f"{self.base_url}/health", timeout=self.timeout_s)
            return resp.status_code == 200
        except requests.RequestException:
            return False
