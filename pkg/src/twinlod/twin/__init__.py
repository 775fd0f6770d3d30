from .nearest import NearestResult, is_available, nearest_available
from .processor import RequestProcessor, response_id_for
from .scenario import (
    ScenarioConfig,
    ScenarioRun,
    ScenarioServices,
    probe_services,
    run_scenario,
    write_operation_log,
)
from .sim import OccupancySimulator, SimParking, SimSpot

__all__ = [
    "NearestResult",
    "OccupancySimulator",
    "RequestProcessor",
    "ScenarioConfig",
    "ScenarioRun",
    "ScenarioServices",
    "SimParking",
    "SimSpot",
    "is_available",
    "nearest_available",
    "probe_services",
    "response_id_for",
    "run_scenario",
    "write_operation_log",
]
