from twinlod.odp.portal import CatalogMetadata, Dataset, Organization, Portal, Resource
from twinlod.odp.dcat import render_dcat

__all__ = [
    "CatalogMetadata",
    "Dataset",
    "Organization",
    "Portal",
    "Resource",
    "render_dcat",
]
