import json
import threading

import pytest
import requests
from hypothesis import given, settings, strategies as st

from twinlod.access import AccessControl, ClientCredential, Policy
from twinlod.errors import (
    Conflict,
    DatasetNotFound,
    InvalidName,
    MetadataOnlyResource,
    ResourceNotFound,
    UnknownOrganization,
)
from twinlod.odp import CatalogMetadata, Portal
from twinlod.odp.http import PortalHttp


@pytest.fixture()
def portal():
    return Portal()


def seed_parking_dataset(portal):
    portal.organization_create("offstreetparking", "OffStreetParking")
    portal.package_create(
        "urn:ngsi-ld:OffStreetParking:1",
        "Parking 1",
        "offstreetparking",
        CatalogMetadata(description="Occupancy of parking 1", keywords=("offstreetparking", "digital-twin")),
    )
    portal.resource_create(
        "urn:ngsi-ld:OffStreetParking:1", "availableSpotNumber", "Occupancy level of Parking 1"
    )


class TestOrganizations:
    def test_create_and_list(self, portal):
        org = portal.organization_create("offstreetparking", "OffStreetParking")
        assert org.name == "offstreetparking"
        assert [o.name for o in portal.organizations()] == ["offstreetparking"]

    def test_duplicate(self, portal):
        portal.organization_create("a", "A")
        with pytest.raises(Conflict):
            portal.organization_create("a", "A")

    @pytest.mark.parametrize("bad", ["Bad Name!", "UPPER", "", "a b", "ä", "a/b"])
    def test_invalid_slug(self, portal, bad):
        with pytest.raises(InvalidName):
            portal.organization_create(bad, "title")

    @pytest.mark.parametrize("good", ["a", "off-street_parking", "x0", "0", "_"])
    def test_valid_slug(self, portal, good):
        assert portal.organization_create(good, "t").name == good


class TestDatasets:
    def test_create_show(self, portal):
        seed_parking_dataset(portal)
        ds = portal.package_show("urn:ngsi-ld:OffStreetParking:1")
        assert ds.title == "Parking 1"
        assert ds.owner_org == "offstreetparking"
        assert ds.visibility == "public"

    def test_duplicate_name(self, portal):
        seed_parking_dataset(portal)
        with pytest.raises(Conflict):
            portal.package_create("urn:ngsi-ld:OffStreetParking:1", "x", "offstreetparking")

    def test_unknown_org(self, portal):
        with pytest.raises(UnknownOrganization):
            portal.package_create("d", "D", "ghost")

    def test_show_unknown(self, portal):
        with pytest.raises(DatasetNotFound):
            portal.package_show("nope")

    def test_show_returns_snapshot(self, portal):
        seed_parking_dataset(portal)
        snap = portal.package_show("urn:ngsi-ld:OffStreetParking:1")
        snap.resources.clear()
        snap.title = "mutated"
        again = portal.package_show("urn:ngsi-ld:OffStreetParking:1")
        assert again.title == "Parking 1"
        assert len(again.resources) == 1


class TestResources:
    def test_append_order_and_count(self, portal):
        seed_parking_dataset(portal)
        name, rid = "urn:ngsi-ld:OffStreetParking:1", "availableSpotNumber"
        assert portal.resource_append(name, rid, {"recorded_at": "t0", "value": 132}) == 1
        assert portal.resource_append(name, rid, {"recorded_at": "t1", "value": 131}) == 2
        rows = portal.resource_rows(name, rid)
        assert [r["value"] for r in rows] == [132, 131]

    def test_append_advances_modified(self, portal):
        ticks = iter(range(100))
        portal = Portal(clock=lambda: next(ticks))
        seed_parking_dataset(portal)
        before = portal.package_show("urn:ngsi-ld:OffStreetParking:1").metadata.modified
        portal.resource_append("urn:ngsi-ld:OffStreetParking:1", "availableSpotNumber", {"value": 1})
        after = portal.package_show("urn:ngsi-ld:OffStreetParking:1").metadata.modified
        assert after > before

    def test_metadata_only_append_rejected(self, portal):
        seed_parking_dataset(portal)
        portal.resource_create(
            "urn:ngsi-ld:OffStreetParking:1",
            "live",
            "Live entity",
            external_url="http://broker/ngsi-ld/v1/entities/urn:ngsi-ld:OffStreetParking:1",
        )
        with pytest.raises(MetadataOnlyResource):
            portal.resource_append("urn:ngsi-ld:OffStreetParking:1", "live", {"value": 1})

    def test_unknown_resource(self, portal):
        seed_parking_dataset(portal)
        with pytest.raises(ResourceNotFound):
            portal.resource_append("urn:ngsi-ld:OffStreetParking:1", "ghost", {})

    def test_duplicate_resource_id(self, portal):
        seed_parking_dataset(portal)
        with pytest.raises(Conflict):
            portal.resource_create("urn:ngsi-ld:OffStreetParking:1", "availableSpotNumber", "again")

    @given(st.lists(st.integers(), max_size=50))
    @settings(max_examples=30)
    def test_rows_equal_append_sequence(self, values):
        portal = Portal()
        portal.organization_create("org", "Org")
        portal.package_create("d", "D", "org")
        portal.resource_create("d", "r", "R")
        for v in values:
            portal.resource_append("d", "r", v)
        assert portal.resource_rows("d", "r") == values

    def test_concurrent_appends_lose_nothing(self, portal):
        seed_parking_dataset(portal)
        name, rid = "urn:ngsi-ld:OffStreetParking:1", "availableSpotNumber"

        def append_many(tag):
            for i in range(200):
                portal.resource_append(name, rid, {"tag": tag, "i": i})

        threads = [threading.Thread(target=append_many, args=(t,)) for t in range(4)]
        for t in threads:
            t.start()
        for t in threads:
            t.join()
        rows = portal.resource_rows(name, rid)
        assert len(rows) == 800
        for tag in range(4):
            own = [r["i"] for r in rows if r["tag"] == tag]
            assert own == sorted(own)  # per-thread order preserved


class TestSearch:
    def test_title_substring_case_insensitive(self, portal):
        seed_parking_dataset(portal)
        assert [d.name for d in portal.package_search("parking")] == ["urn:ngsi-ld:OffStreetParking:1"]
        assert [d.name for d in portal.package_search("PARKING")] == ["urn:ngsi-ld:OffStreetParking:1"]
        assert portal.package_search("zeppelin") == []

    def test_empty_query_matches_all(self, portal):
        seed_parking_dataset(portal)
        portal.package_create("other", "Other", "offstreetparking")
        assert [d.name for d in portal.package_search("")] == ["other", "urn:ngsi-ld:OffStreetParking:1"]

    def test_filters(self, portal):
        seed_parking_dataset(portal)
        portal.organization_create("vehicle", "Vehicle")
        portal.package_create("v1", "Van 1", "vehicle")
        assert [d.name for d in portal.package_search("", org="vehicle")] == ["v1"]
        assert [d.name for d in portal.package_search("", keyword="digital-twin")] == [
            "urn:ngsi-ld:OffStreetParking:1"
        ]

    @given(
        titles=st.lists(
            st.text(st.characters(categories=["L", "N"], max_codepoint=0x2FF), min_size=1, max_size=12),
            min_size=1,
            max_size=8,
            unique=True,
        ),
        query=st.text(st.characters(categories=["L", "N"], max_codepoint=0x2FF), max_size=4),
    )
    @settings(max_examples=40)
    def test_search_completeness(self, titles, query):
        portal = Portal()
        portal.organization_create("org", "Org")
        for i, title in enumerate(titles):
            portal.package_create(f"d{i}", title, "org")
        hits = {d.name for d in portal.package_search(query)}
        for i, title in enumerate(titles):
            searched = (f"d{i}", title, "", *())
            expected = any(query.lower() in h.lower() for h in searched)
            assert ((f"d{i}" in hits) == expected) or not query
        names = [d.name for d in portal.package_search(query)]
        assert names == sorted(names)


def _auth_control():
    return AccessControl(
        [ClientCredential("flow-engine", "s", frozenset({"flow"}))],
        [Policy("flow", "POST", "/api/3/action/*")],
    )


class TestPortalHttp:
    @pytest.fixture()
    def served(self):
        control = _auth_control()
        http = PortalHttp(Portal(), control, name="odp")
        http.service.start()
        token = control.issue_token("flow-engine", "s")
        yield http, {"Authorization": f"Bearer {token.value}"}
        http.service.stop()

    def test_write_requires_token(self, served):
        http, auth = served
        url = http.url
        resp = requests.post(f"{url}/api/3/action/organization_create", json={"name": "a", "title": "A"})
        assert resp.status_code == 401
        assert resp.json()["success"] is False
        resp = requests.post(
            f"{url}/api/3/action/organization_create", json={"name": "a", "title": "A"}, headers=auth
        )
        assert resp.status_code == 200
        assert resp.json() == {"success": True, "result": {"name": "a", "title": "A", "created": resp.json()["result"]["created"]}}

    def test_full_flow_over_http(self, served):
        http, auth = served
        url = http.url
        requests.post(
            f"{url}/api/3/action/organization_create",
            json={"name": "offstreetparking", "title": "OffStreetParking"},
            headers=auth,
        )
        resp = requests.post(
            f"{url}/api/3/action/package_create",
            json={
                "name": "urn:ngsi-ld:OffStreetParking:1",
                "title": "Parking 1",
                "owner_org": "offstreetparking",
                "tags": [{"name": "offstreetparking"}],
            },
            headers=auth,
        )
        assert resp.status_code == 200
        resp = requests.post(
            f"{url}/api/3/action/resource_create",
            json={
                "package_id": "urn:ngsi-ld:OffStreetParking:1",
                "id": "availableSpotNumber",
                "name": "Occupancy level of Parking 1",
            },
            headers=auth,
        )
        assert resp.status_code == 200
        for value in (132, 131, 130):
            resp = requests.post(
                f"{url}/api/3/action/resource_append",
                json={
                    "package_id": "urn:ngsi-ld:OffStreetParking:1",
                    "id": "availableSpotNumber",
                    "row": {"recorded_at": "t", "value": value},
                },
                headers=auth,
            )
            assert resp.status_code == 200
        assert resp.json()["result"]["count"] == 3

        shown = requests.get(
            f"{url}/api/3/action/package_show", params={"id": "urn:ngsi-ld:OffStreetParking:1"}
        ).json()
        assert shown["result"]["title"] == "Parking 1"
        assert shown["result"]["resources"][0]["rows_count"] == 3

        found = requests.get(f"{url}/api/3/action/package_search", params={"q": "Parking"}).json()
        assert found["result"]["count"] == 1

        rows_resp = requests.get(
            f"{url}/datasets/urn:ngsi-ld:OffStreetParking:1/resources/availableSpotNumber/rows"
        )
        assert rows_resp.status_code == 200
        values = [json.loads(line)["value"] for line in rows_resp.text.splitlines()]
        assert values == [132, 131, 130]

        dcat = requests.get(f"{url}/datasets/urn:ngsi-ld:OffStreetParking:1/dcat.rdf")
        assert dcat.status_code == 200
        assert dcat.headers["Content-Type"].startswith("application/rdf+xml")
        assert "<dct:title>Parking 1</dct:title>" in dcat.text

    def test_error_envelope_statuses(self, served):
        http, auth = served
        url = http.url
        resp = requests.get(f"{url}/api/3/action/package_show", params={"id": "ghost"})
        assert resp.status_code == 404
        body = resp.json()
        assert body["success"] is False and body["error"]["__type"] == "DatasetNotFound"
        resp = requests.post(
            f"{url}/api/3/action/organization_create", json={"name": "Bad!", "title": "x"}, headers=auth
        )
        assert resp.status_code == 400
        resp = requests.post(
            f"{url}/api/3/action/organization_create",
            data="{broken",
            headers={**auth, "Content-Type": "application/json"},
        )
        assert resp.status_code == 400

    def test_read_paths_public(self, served):
        http, _ = served
        resp = requests.get(f"{http.url}/api/3/action/package_search", params={"q": ""})
        assert resp.status_code == 200
