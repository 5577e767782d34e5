"""Pipeline stages for one simulation run."""

from .load_scenario import LoadScenarioStage
from .simulate import SimulateStage
from .audit import AuditStage
from .write_results import WriteResultsStage

__all__ = [
    "LoadScenarioStage",
    "SimulateStage",
    "AuditStage",
    "WriteResultsStage",
]
