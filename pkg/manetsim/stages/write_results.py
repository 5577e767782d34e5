"""
Write Results Stage - persists the result row of a run.

Single responsibility: Write the CSV row and its JSON summary sibling.
"""

import csv
import io
import json
from pathlib import Path

from stageflow import StageContext, StageKind, StageOutput

from ..models import CSV_HEADER, RunResult
from ..utils.scenario_parser import write_atomically


def result_csv(results: list[RunResult]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(CSV_HEADER)
    for result in results:
        writer.writerow(result.to_row())
    return buf.getvalue()


class WriteResultsStage:
    """Stage that writes ``<out>.csv`` and ``<out>.json`` when an output path is set."""

    name = "write_results"
    kind = StageKind.WORK

    async def execute(self, ctx: StageContext) -> StageOutput:
        result = ctx.inputs.get_from("audit", "result")
        out_path = (ctx.snapshot.metadata or {}).get("out_path")
        if not out_path:
            return StageOutput.skip(reason="No output path configured")
        if result is None:
            return StageOutput.fail(error="No audited result to write")

        csv_path = Path(out_path)
        json_path = csv_path.with_suffix(".json")
        try:
            write_atomically(csv_path, result_csv([result]))
            summary = result.to_dict()
            summary["source_loss_share"] = ctx.inputs.get_from("audit", "source_loss_share")
            summary["transit_loss_share"] = ctx.inputs.get_from("audit", "transit_loss_share")
            write_atomically(json_path, json.dumps(summary, indent=2) + "\n")
        except OSError as e:
            return StageOutput.fail(error=f"Failed to write results: {e}", data={"out_path": str(csv_path)})

        ctx.try_emit_event("results.written", {"csv": str(csv_path), "json": str(json_path)})
        return StageOutput.ok(csv_path=str(csv_path), json_path=str(json_path))
