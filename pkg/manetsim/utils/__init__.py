"""Utility modules for the MANET simulator."""

from .logger import get_logger, setup_logging
from .scenario_parser import ScenarioParser, emit_scenario, parse_scenario

__all__ = ["get_logger", "setup_logging", "ScenarioParser", "emit_scenario", "parse_scenario"]
