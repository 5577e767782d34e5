"""
Deterministic discrete-event simulator for mobile ad hoc networks.

Compares TORA with DSR and Preemptive DSR on random-waypoint mobility over
an abstract range-based wireless channel.

Features:
- Exact link-change times from piecewise-linear trajectories
- Per-neighborhood serialized medium with byte-accurate timing
- Bit-exact replay of every result row from its trace
- Parameter sweeps through stageflow pipelines
"""

__version__ = "0.1.0"

from .config import FrameSizes, Protocol, Scenario, ScenarioError, SpeedClass, SweepGrid
from .models import RunResult
from .simulation import Network, run_scenario

__all__ = [
    "FrameSizes",
    "Protocol",
    "Scenario",
    "ScenarioError",
    "SpeedClass",
    "SweepGrid",
    "RunResult",
    "Network",
    "run_scenario",
    "__version__",
]
