"""
Simulate Stage - executes one deterministic run.

Single responsibility: Drive the network to the end of the scenario and
hand back the result row together with the packet records.
"""

import asyncio
from pathlib import Path

from stageflow import StageContext, StageKind, StageOutput

from ..simulation import Network
from ..trace import TraceWriter
from ..utils.logger import get_logger

logger = get_logger("simulate")


def _run(scenario, trace_path: str | None):
    tracer = TraceWriter.to_file(Path(trace_path)) if trace_path else None
    try:
        net = Network(scenario, tracer)
        result = net.run()
        records = [net.ledger.records[uid] for uid in sorted(net.ledger.records)]
        return result, records
    finally:
        if tracer is not None:
            tracer.close()


class SimulateStage:
    """Stage that runs the simulator off the event loop thread."""

    name = "simulate"
    kind = StageKind.WORK

    async def execute(self, ctx: StageContext) -> StageOutput:
        scenario = ctx.inputs.get_from("load_scenario", "scenario")
        if scenario is None:
            return StageOutput.fail(error="No scenario provided to simulate")
        trace_path = (ctx.snapshot.metadata or {}).get("trace_path")

        try:
            result, records = await asyncio.to_thread(_run, scenario, trace_path)
        except Exception as e:
            logger.error(f"Simulation failed: {e}", extra={"seed": scenario.seed})
            ctx.try_emit_event("simulation.failed", {"seed": scenario.seed, "error": str(e)})
            return StageOutput.fail(
                error=f"Simulation failed: {e}",
                data={"error_type": type(e).__name__, "seed": scenario.seed},
            )

        ctx.try_emit_event("simulation.completed", {
            "seed": scenario.seed,
            "data_sent": result.data_sent,
            "data_delivered": result.data_delivered,
        })
        return StageOutput.ok(result=result, records=records, trace_path=trace_path)
