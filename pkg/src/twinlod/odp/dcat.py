"""DCAT RDF/XML rendering for one dataset record.

The document is assembled by hand so the namespace prefixes come out
exactly as `rdf`, `dcat`, and `dct`; a generic XML serializer offers no
such guarantee. Escaping uses the stdlib.
"""

from __future__ import annotations

import re
from xml.sax.saxutils import escape, quoteattr

from twinlod.odp.portal import Dataset
from twinlod.timeutil import format_ms

RDF_NS = "http://www.w3.org/1999/02/22-rdf-syntax-ns#"
DCAT_NS = "http://www.w3.org/ns/dcat#"
DCT_NS = "http://purl.org/dc/terms/"

# characters XML 1.0 cannot carry even escaped
_XML_ILLEGAL = re.compile(r"[\x00-\x08\x0b\x0c\x0e-\x1f\ud800-\udfff￾￿]")


def _text(value: str) -> str:
    return escape(_XML_ILLEGAL.sub("", value))


def _attr(value: str) -> str:
    return quoteattr(_XML_ILLEGAL.sub("", value))


def rows_url(base_url: str, dataset_name: str, resource_id: str) -> str:
    return f"{base_url.rstrip('/')}/datasets/{dataset_name}/resources/{resource_id}/rows"


def render_dcat(dataset: Dataset, base_url: str) -> str:
    """Render RDF/XML with one dcat:Distribution per resource.

    Each distribution's access URL points at the portal row dump, except
    for metadata-only resources, whose access URL is the external origin
    (the live broker entity).
    """
    about = f"{base_url.rstrip('/')}/datasets/{dataset.name}"
    lines = [
        '<?xml version="1.0" encoding="UTF-8"?>',
        "<rdf:RDF",
        f' xmlns:rdf="{RDF_NS}"',
        f' xmlns:dcat="{DCAT_NS}"',
        f' xmlns:dct="{DCT_NS}">',
        f" <dcat:Dataset rdf:about={_attr(about)}>",
        f"  <dct:title>{_text(dataset.title)}</dct:title>",
    ]
    meta = dataset.metadata
    if meta.description:
        lines.append(f"  <dct:description>{_text(meta.description)}</dct:description>")
    if meta.issued is not None:
        lines.append(f"  <dct:issued>{format_ms(meta.issued)}</dct:issued>")
    if meta.modified is not None:
        lines.append(f"  <dct:modified>{format_ms(meta.modified)}</dct:modified>")
    for keyword in meta.keywords:
        lines.append(f"  <dcat:keyword>{_text(keyword)}</dcat:keyword>")
    for resource in dataset.resources:
        access = (
            resource.external_url
            if resource.external_url is not None
            else rows_url(base_url, dataset.name, resource.id)
        )
        lines.extend(
            [
                "  <dcat:distribution>",
                "   <dcat:Distribution>",
                f"    <dct:title>{_text(resource.name)}</dct:title>",
                f"    <dct:format>{_text(resource.format)}</dct:format>",
                f"    <dcat:accessURL rdf:resource={_attr(access)}/>",
                "   </dcat:Distribution>",
                "  </dcat:distribution>",
            ]
        )
    lines.extend([" </dcat:Dataset>", "</rdf:RDF>"])
    return "\n".join(lines) + "\n"
