import re
import xml.etree.ElementTree as ET

import pytest
from hypothesis import given, settings, strategies as st

from twinlod.odp import CatalogMetadata, Portal, render_dcat
from twinlod.odp.dcat import DCAT_NS, DCT_NS, RDF_NS

BASE = "http://127.0.0.1:8084"


@pytest.fixture()
def portal():
    ticks = iter(range(10_000))
    p = Portal(clock=lambda: next(ticks))
    p.organization_create("offstreetparking", "OffStreetParking")
    p.package_create(
        "urn:ngsi-ld:OffStreetParking:1",
        "Parking 1",
        "offstreetparking",
        CatalogMetadata(description="Occupancy of parking 1", keywords=("offstreetparking",)),
    )
    p.resource_create(
        "urn:ngsi-ld:OffStreetParking:1", "availableSpotNumber", "Occupancy level of Parking 1"
    )
    return p


def test_reference_titles_and_namespaces(portal):
    xml = render_dcat(portal.package_show("urn:ngsi-ld:OffStreetParking:1"), BASE)
    assert 'xmlns:rdf="http://www.w3.org/1999/02/22-rdf-syntax-ns#"' in xml
    assert 'xmlns:dcat="http://www.w3.org/ns/dcat#"' in xml
    assert 'xmlns:dct="http://purl.org/dc/terms/"' in xml
    assert "<dct:title>Parking 1</dct:title>" in xml
    assert "<dct:title>Occupancy level of Parking 1</dct:title>" in xml


def test_well_formed_and_striped(portal):
    xml = render_dcat(portal.package_show("urn:ngsi-ld:OffStreetParking:1"), BASE)
    root = ET.fromstring(xml)
    assert root.tag == f"{{{RDF_NS}}}RDF"
    datasets = root.findall(f"{{{DCAT_NS}}}Dataset")
    assert len(datasets) == 1
    wrappers = datasets[0].findall(f"{{{DCAT_NS}}}distribution")
    assert len(wrappers) == 1
    dist = wrappers[0].find(f"{{{DCAT_NS}}}Distribution")
    assert dist is not None
    assert dist.find(f"{{{DCT_NS}}}title").text == "Occupancy level of Parking 1"
    access = dist.find(f"{{{DCAT_NS}}}accessURL")
    assert access.get(f"{{{RDF_NS}}}resource") == (
        f"{BASE}/datasets/urn:ngsi-ld:OffStreetParking:1/resources/availableSpotNumber/rows"
    )


def test_distribution_titles_match_resources(portal):
    portal.resource_create("urn:ngsi-ld:OffStreetParking:1", "location", "location of Parking 1")
    xml = render_dcat(portal.package_show("urn:ngsi-ld:OffStreetParking:1"), BASE)
    root = ET.fromstring(xml)
    titles = sorted(
        d.find(f"{{{DCAT_NS}}}Distribution/{{{DCT_NS}}}title").text
        for d in root.findall(f"{{{DCAT_NS}}}Dataset/{{{DCAT_NS}}}distribution")
    )
    assert titles == ["Occupancy level of Parking 1", "location of Parking 1"]


def test_zero_resources_zero_distributions(portal):
    portal.package_create("empty", "Empty", "offstreetparking")
    xml = render_dcat(portal.package_show("empty"), BASE)
    root = ET.fromstring(xml)
    assert root.findall(f".//{{{DCAT_NS}}}distribution") == []


def test_metadata_only_access_url_points_to_origin(portal):
    origin = "http://127.0.0.1:8081/ngsi-ld/v1/entities/urn:ngsi-ld:OffStreetParking:2"
    portal.package_create("urn:ngsi-ld:OffStreetParking:2", "Parking 2", "offstreetparking")
    portal.resource_create(
        "urn:ngsi-ld:OffStreetParking:2", "live", "Live entity", external_url=origin
    )
    xml = render_dcat(portal.package_show("urn:ngsi-ld:OffStreetParking:2"), BASE)
    root = ET.fromstring(xml)
    access = root.find(f".//{{{DCAT_NS}}}accessURL")
    assert access.get(f"{{{RDF_NS}}}resource") == origin


def test_reexport_after_append_changes_only_modified(portal):
    name = "urn:ngsi-ld:OffStreetParking:1"
    before = render_dcat(portal.package_show(name), BASE)
    portal.resource_append(name, "availableSpotNumber", {"value": 132})
    after = render_dcat(portal.package_show(name), BASE)

    def strip_modified(doc):
        return re.sub(r"<dct:modified>[^<]*</dct:modified>", "", doc)

    assert before != after
    assert strip_modified(before) == strip_modified(after)


def test_escaping_of_xml_characters():
    portal = Portal()
    portal.organization_create("org", "Org")
    portal.package_create("d", 'Title <with> & "quotes"', "org")
    portal.resource_create("d", "r", "Rows & <more>")
    xml = render_dcat(portal.package_show("d"), BASE)
    root = ET.fromstring(xml)  # must stay well-formed
    assert root.find(f".//{{{DCT_NS}}}title").text == 'Title <with> & "quotes"'


_XML_SAFE_TEXT = st.text(
    st.characters(blacklist_categories=["Cs", "Cc"], blacklist_characters="￾￿"),
    min_size=1,
    max_size=20,
)


@given(
    title=_XML_SAFE_TEXT.filter(lambda s: s.strip()),
    resource_names=st.lists(_XML_SAFE_TEXT, max_size=4),
)
@settings(max_examples=40)
def test_any_titles_render_well_formed(title, resource_names):
    portal = Portal()
    portal.organization_create("org", "Org")
    portal.package_create("d", title, "org")
    for i, rname in enumerate(resource_names):
        portal.resource_create("d", f"r{i}", rname)
    xml = render_dcat(portal.package_show("d"), BASE)
    root = ET.fromstring(xml)
    rendered = sorted(
        el.text or ""
        for el in root.findall(f".//{{{DCAT_NS}}}Distribution/{{{DCT_NS}}}title")
    )
    assert rendered == sorted(resource_names)


def test_control_characters_dropped_not_emitted():
    portal = Portal()
    portal.organization_create("org", "Org")
    portal.package_create("d", "Par\x08king \x00 1", "org")
    xml = render_dcat(portal.package_show("d"), BASE)
    root = ET.fromstring(xml)
    assert root.find(f".//{{{DCT_NS}}}title").text == "Parking  1"
