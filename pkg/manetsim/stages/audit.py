"""
Audit Stage - guards the result of a run.

Single responsibility: Reject a run whose packets are not all accounted for.
"""

from stageflow import StageContext, StageKind, StageOutput

from ..metrics import ConservationError, conservation_audit


class AuditStage:
    """Stage that re-checks packet conservation and the drop decomposition."""

    name = "audit"
    kind = StageKind.GUARD

    async def execute(self, ctx: StageContext) -> StageOutput:
        result = ctx.inputs.get_from("simulate", "result")
        records = ctx.inputs.get_from("simulate", "records", default=[])
        if result is None:
            return StageOutput.fail(error="No result to audit")

        try:
            report = conservation_audit(records)
        except ConservationError as e:
            ctx.try_emit_event("audit.failed", {"reason": str(e)})
            return StageOutput.fail(error=f"Conservation audit failed: {e}", data={"error_type": "CONSERVATION"})

        counted = (report.generated, report.delivered, report.dropped_at_source, report.dropped_in_transit)
        reported = (result.data_sent, result.data_delivered, result.drop_source, result.drop_transit)
        if counted != reported:
            return StageOutput.fail(
                error=f"Result row {reported} disagrees with packet records {counted}",
                data={"error_type": "CONSERVATION"},
            )

        return StageOutput.ok(
            audited=True,
            result=result,
            source_loss_share=report.source_loss_share,
            transit_loss_share=report.transit_loss_share,
        )
