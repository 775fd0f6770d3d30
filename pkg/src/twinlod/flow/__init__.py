from twinlod.flow.records import PROVENANCES, FlowRecord
from twinlod.flow.models import ModelRegistry
from twinlod.flow.engine import (
    CatalogMetadata,
    FlowEngine,
    HomogenizationRules,
    MappingRules,
    distribution_title,
    humanize_title,
)
from twinlod.flow.graph import GraphHandle, ProcessorGraph, run_graph

__all__ = [
    "PROVENANCES",
    "FlowRecord",
    "ModelRegistry",
    "CatalogMetadata",
    "FlowEngine",
    "HomogenizationRules",
    "MappingRules",
    "distribution_title",
    "humanize_title",
    "GraphHandle",
    "ProcessorGraph",
    "run_graph",
]
