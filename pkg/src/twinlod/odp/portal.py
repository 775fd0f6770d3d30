"""In-memory open-data portal: organizations, datasets, resources, search.

A dataset (package) belongs to one organization and carries resources that
are either append-only row lists or metadata-only pointers to an external
URL. Mutations serialize per dataset; reads copy a consistent snapshot.
"""

from __future__ import annotations

import re
import threading
from dataclasses import dataclass, field, replace
from typing import Any, Callable, Iterable

from twinlod.errors import (
    Conflict,
    DatasetNotFound,
    InvalidName,
    MetadataOnlyResource,
    ResourceNotFound,
    UnknownOrganization,
)
from twinlod.timeutil import format_ms, utc_now_ms

_SLUG_RE = re.compile(r"[a-z0-9_-]+")


@dataclass(frozen=True)
class Organization:
    name: str
    title: str
    created_at: int  # epoch ms

    def to_wire(self) -> dict[str, Any]:
        return {"name": self.name, "title": self.title, "created": format_ms(self.created_at)}


@dataclass(frozen=True)
class CatalogMetadata:
    description: str = ""
    issued: int | None = None  # epoch ms, first sighting
    modified: int | None = None
    keywords: tuple[str, ...] = ()


@dataclass
class Resource:
    id: str
    name: str
    format: str = "JSONL"
    rows: list[Any] | None = None
    external_url: str | None = None

    def __post_init__(self):
        if (self.rows is None) == (self.external_url is None):
            raise InvalidName("resource holds either rows or an external URL, never both")

    def to_wire(self) -> dict[str, Any]:
        doc: dict[str, Any] = {"id": self.id, "name": self.name, "format": self.format}
        if self.external_url is not None:
            doc["url"] = self.external_url
        else:
            doc["rows_count"] = len(self.rows or [])
        return doc


@dataclass
class Dataset:
    name: str
    title: str
    owner_org: str
    metadata: CatalogMetadata = field(default_factory=CatalogMetadata)
    resources: list[Resource] = field(default_factory=list)
    visibility: str = "public"

    def resource(self, resource_id: str) -> Resource:
        for r in self.resources:
            if r.id == resource_id:
                return r
        raise ResourceNotFound(f"{self.name}: no resource {resource_id!r}")

    def to_wire(self) -> dict[str, Any]:
        meta = self.metadata
        return {
            "name": self.name,
            "title": self.title,
            "owner_org": self.owner_org,
            "notes": meta.description,
            "tags": [{"name": k} for k in meta.keywords],
            "metadata_created": format_ms(meta.issued) if meta.issued is not None else None,
            "metadata_modified": format_ms(meta.modified) if meta.modified is not None else None,
            "resources": [r.to_wire() for r in self.resources],
        }


class Portal:
    def __init__(self, name: str = "odp", clock: Callable[[], int] = utc_now_ms):
        self.name = name
        self.clock = clock
        self._registry_lock = threading.RLock()
        self._orgs: dict[str, Organization] = {}
        self._datasets: dict[str, Dataset] = {}
        self._dataset_locks: dict[str, threading.RLock] = {}

    # --- organizations ---

    def organization_create(self, name: str, title: str) -> Organization:
        if not _SLUG_RE.fullmatch(name or ""):
            raise InvalidName(f"organization name {name!r} is not a lowercase slug")
        with self._registry_lock:
            if name in self._orgs:
                raise Conflict(f"organization {name!r} already exists")
            org = Organization(name, title, self.clock())
            self._orgs[name] = org
            return org

    def organizations(self) -> list[Organization]:
        with self._registry_lock:
            return sorted(self._orgs.values(), key=lambda o: o.name)

    def has_organization(self, name: str) -> bool:
        with self._registry_lock:
            return name in self._orgs

    # --- datasets ---

    def package_create(
        self,
        name: str,
        title: str,
        owner_org: str,
        metadata: CatalogMetadata | None = None,
    ) -> Dataset:
        if not name:
            raise InvalidName("dataset name must be non-empty")
        with self._registry_lock:
            if name in self._datasets:
                raise Conflict(f"dataset {name!r} already exists")
            if owner_org not in self._orgs:
                raise UnknownOrganization(owner_org)
            dataset = Dataset(name, title, owner_org, metadata or CatalogMetadata())
            self._datasets[name] = dataset
            self._dataset_locks[name] = threading.RLock()
            return self._copy(dataset)

    def has_package(self, name: str) -> bool:
        with self._registry_lock:
            return name in self._datasets

    def package_show(self, name: str) -> Dataset:
        dataset, lock = self._dataset_and_lock(name)
        with lock:
            return self._copy(dataset)

    def package_search(self, query: str = "", org: str | None = None, keyword: str | None = None) -> list[Dataset]:
        """Case-insensitive substring search over name, title, description,
        keywords. An empty query matches every public dataset."""
        needle = (query or "").lower()
        with self._registry_lock:
            names = sorted(self._datasets)
        out = []
        for name in names:
            try:
                dataset = self.package_show(name)
            except DatasetNotFound:
                continue
            if org is not None and dataset.owner_org != org:
                continue
            if keyword is not None and keyword not in dataset.metadata.keywords:
                continue
            haystacks = (
                dataset.name,
                dataset.title,
                dataset.metadata.description,
                *dataset.metadata.keywords,
            )
            if not needle or any(needle in h.lower() for h in haystacks):
                out.append(dataset)
        return out

    def update_metadata(
        self,
        name: str,
        title: str | None = None,
        description: str | None = None,
        keywords: Iterable[str] | None = None,
    ) -> Dataset:
        dataset, lock = self._dataset_and_lock(name)
        with lock:
            meta = dataset.metadata
            issued = meta.issued if meta.issued is not None else self.clock()
            dataset.metadata = replace(
                meta,
                description=meta.description if description is None else description,
                keywords=meta.keywords if keywords is None else tuple(keywords),
                issued=issued,
                modified=self.clock(),
            )
            if title is not None:
                dataset.title = title
            return self._copy(dataset)

    # --- resources ---

    def resource_create(
        self,
        dataset_name: str,
        resource_id: str,
        name: str,
        format: str = "JSONL",
        external_url: str | None = None,
    ) -> Resource:
        dataset, lock = self._dataset_and_lock(dataset_name)
        with lock:
            if any(r.id == resource_id for r in dataset.resources):
                raise Conflict(f"{dataset_name}: resource {resource_id!r} already exists")
            resource = Resource(
                id=resource_id,
                name=name,
                format=format,
                rows=None if external_url is not None else [],
                external_url=external_url,
            )
            dataset.resources.append(resource)
            self._touch(dataset)
            return resource

    def resource_append(self, dataset_name: str, resource_id: str, row: Any) -> int:
        dataset, lock = self._dataset_and_lock(dataset_name)
        with lock:
            resource = dataset.resource(resource_id)
            if resource.rows is None:
                raise MetadataOnlyResource(f"{dataset_name}/{resource_id} carries no rows")
            resource.rows.append(row)
            self._touch(dataset)
            return len(resource.rows)

    def resource_rows(self, dataset_name: str, resource_id: str) -> list[Any]:
        dataset, lock = self._dataset_and_lock(dataset_name)
        with lock:
            resource = dataset.resource(resource_id)
            if resource.rows is None:
                raise MetadataOnlyResource(f"{dataset_name}/{resource_id} carries no rows")
            return list(resource.rows)

    # --- internals ---

    def _dataset_and_lock(self, name: str) -> tuple[Dataset, threading.RLock]:
        with self._registry_lock:
            dataset = self._datasets.get(name)
            if dataset is None:
                raise DatasetNotFound(name)
            return dataset, self._dataset_locks[name]

    def _touch(self, dataset: Dataset) -> None:
        meta = dataset.metadata
        dataset.metadata = replace(
            meta,
            issued=meta.issued if meta.issued is not None else self.clock(),
            modified=self.clock(),
        )

    @staticmethod
    def _copy(dataset: Dataset) -> Dataset:
        return Dataset(
            name=dataset.name,
            title=dataset.title,
            owner_org=dataset.owner_org,
            metadata=dataset.metadata,
            resources=[
                Resource(r.id, r.name, r.format, list(r.rows) if r.rows is not None else None, r.external_url)
                for r in dataset.resources
            ],
            visibility=dataset.visibility,
        )
