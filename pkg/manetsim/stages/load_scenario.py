"""
Load Scenario Stage - resolves the scenario a run will execute.

Single responsibility: Produce one validated Scenario from the run metadata.
"""

from pathlib import Path

from stageflow import StageContext, StageKind, StageOutput

from ..config import Scenario, ScenarioError
from ..utils.scenario_parser import ScenarioParser


class LoadScenarioStage:
    """Stage that parses the scenario file (or takes a ready Scenario) and applies overrides."""

    name = "load_scenario"
    kind = StageKind.TRANSFORM

    async def execute(self, ctx: StageContext) -> StageOutput:
        metadata = ctx.snapshot.metadata or {}
        scenario = metadata.get("scenario")
        path = metadata.get("scenario_path")

        try:
            if scenario is None:
                if not path:
                    return StageOutput.fail(
                        error="No scenario or scenario_path in run metadata",
                        data={"error_type": "MISSING_SCENARIO"},
                    )
                scenario = ScenarioParser(Path(path)).parse()
            if not isinstance(scenario, Scenario):
                return StageOutput.fail(
                    error=f"Expected a Scenario, got {type(scenario).__name__}",
                    data={"error_type": "BAD_SCENARIO"},
                )
            seed = metadata.get("seed")
            if seed is not None:
                scenario = scenario.with_overrides(seed=int(seed))
        except FileNotFoundError as e:
            return StageOutput.fail(error=str(e), data={"error_type": "FILE_NOT_FOUND"})
        except ScenarioError as e:
            return StageOutput.fail(
                error=f"Invalid scenario: {e}",
                data={"error_type": "SCENARIO_ERROR", "key": e.key, "line": e.line},
            )

        ctx.try_emit_event("scenario.loaded", {
            "protocol": scenario.protocol.value,
            "nodes": scenario.nodes,
            "seed": scenario.seed,
        })
        return StageOutput.ok(scenario=scenario, seed=scenario.seed)
