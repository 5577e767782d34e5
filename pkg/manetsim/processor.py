"""
Scenario Processor - runs scenarios and sweeps through stageflow pipelines.

Every run, whether a single ``run`` or one point of a sweep, goes through
the same four-stage pipeline: load, simulate, audit, write.
"""

import asyncio
import csv
import io
from pathlib import Path
from typing import Any, Callable
from uuid import uuid4

import numpy as np
from stageflow import Pipeline, PipelineTimer, StageContext, StageKind, StageStatus
from stageflow.context import ContextSnapshot, RunIdentity
from stageflow.stages import StageInputs

from .config import ProcessorConfig, Scenario, ScenarioError, SweepGrid
from .models import NOT_MEASURABLE, PointRun, RunResult, SweepOutcome, format_metric
from .run_manager import RunManager
from .stages import AuditStage, LoadScenarioStage, SimulateStage, WriteResultsStage
from .stages.write_results import result_csv
from .utils.logger import get_logger
from .utils.scenario_parser import write_atomically

logger = get_logger("processor")

AGGREGATE_METRICS: tuple[str, ...] = (
    "throughput_kBps", "pct_delivered", "pdf", "avg_delay_ms",
    "recv_eff", "send_eff", "fwd_eff", "ctrl_pkts", "ctrl_bytes",
    "route_latency_ms",
)
PLOT_METRICS: tuple[str, ...] = ("pdf", "avg_delay_ms", "throughput_kBps", "fwd_eff", "ctrl_pkts")
# grid axis name -> position in RunResult.grid_key
SWEEP_AXES: dict[str, int] = {"pause_s": 3, "nodes": 1, "speed_class": 2}


class RunFailed(RuntimeError):
    """A single run's pipeline did not finish."""


def swept_axis(grid: SweepGrid) -> str:
    """The axis plot files use as x: the first of pause, nodes, speed with more than one value."""
    for name, values in (("pause_s", grid.pauses), ("nodes", grid.nodes), ("speed_class", grid.speeds)):
        if len(values) > 1:
            return name
    return "pause_s"


def summarize(values: list[float | int | None]) -> tuple[int, float | None, float | None, float | None]:
    """Count, mean, min and max over the measurable values."""
    measured = np.array([v for v in values if v is not None], dtype=float)
    if measured.size == 0:
        return 0, None, None, None
    return int(measured.size), float(measured.mean()), float(measured.min()), float(measured.max())


def aggregates_csv(results: list[RunResult]) -> str:
    groups: dict[tuple, list[RunResult]] = {}
    for result in sorted(results, key=lambda r: r.grid_key):
        groups.setdefault(result.grid_key[:4], []).append(result)
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["protocol", "nodes", "speed_class", "pause_s", "metric", "n", "mean", "min", "max"])
    for (protocol, nodes, speed, pause), rows in groups.items():
        for metric in AGGREGATE_METRICS:
            n, mean, lo, hi = summarize([r.metric(metric) for r in rows])
            writer.writerow([
                protocol, nodes, speed, format_metric(float(pause)), metric, n,
                format_metric(mean), format_metric(lo), format_metric(hi),
            ])
    return buf.getvalue()


def plot_csv(results: list[RunResult], metric: str, axis: str) -> str:
    """x = swept parameter, one column (mean over seeds) per protocol."""
    idx = SWEEP_AXES[axis]
    protocols = sorted({r.echo.protocol for r in results})
    xs = sorted({r.grid_key[idx] for r in results})
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow([axis, *protocols])
    for x in xs:
        row: list[Any] = [format_metric(float(x)) if axis == "pause_s" else x]
        for protocol in protocols:
            values = [r.metric(metric) for r in results if r.echo.protocol == protocol and r.grid_key[idx] == x]
            row.append(format_metric(summarize(values)[1]) if values else NOT_MEASURABLE)
        writer.writerow(row)
    return buf.getvalue()


def failures_csv(failures: list[PointRun]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["point", "protocol", "nodes", "speed_class", "pause_s", "seed", "error"])
    for point in sorted(failures, key=lambda p: p.key):
        writer.writerow([point.id, *point.key, point.error or ""])
    return buf.getvalue()


class ScenarioProcessor:
    """
    Orchestrates runs with stageflow pipelines.

    Features:
    - DAG-based pipeline per run (load, simulate, audit, write)
    - Parallel sweep batches
    - Failed points recorded and skipped, never fatal to the sweep
    - Sweep state persistence
    """

    def __init__(self, config: ProcessorConfig | None = None):
        self.config = config or ProcessorConfig()
        self.config.ensure_directories()
        self._init_stages()
        self._pipeline = self._build_pipeline()
        self._listeners: list[Callable[[str, dict], None]] = []

    def _init_stages(self) -> None:
        self.load_stage = LoadScenarioStage()
        self.simulate_stage = SimulateStage()
        self.audit_stage = AuditStage()
        self.write_stage = WriteResultsStage()

    def _build_pipeline(self) -> Pipeline:
        return (
            Pipeline()
            .with_stage("load_scenario", self.load_stage, StageKind.TRANSFORM)
            .with_stage("simulate", self.simulate_stage, StageKind.WORK, dependencies=("load_scenario",))
            .with_stage("audit", self.audit_stage, StageKind.GUARD, dependencies=("simulate",))
            .with_stage("write_results", self.write_stage, StageKind.WORK, dependencies=("audit",))
        )

    async def _run_pipeline(self, metadata: dict[str, Any]) -> dict[str, Any]:
        """Run one scenario through the pipeline; never raises for pipeline failures."""
        snapshot = ContextSnapshot(
            run_id=RunIdentity(
                pipeline_run_id=uuid4(),
                request_id=uuid4(),
                session_id=uuid4(),
                user_id=None,
                org_id=None,
                interaction_id=uuid4(),
            ),
            topology="manet_simulation",
            execution_mode="default",
            metadata=metadata,
        )
        ctx = StageContext(
            snapshot=snapshot,
            inputs=StageInputs(snapshot=snapshot),
            stage_name="pipeline",
            timer=PipelineTimer(),
        )
        try:
            results = await self._pipeline.build().run(ctx)
        except Exception as e:
            return {"success": False, "error": str(e)}

        for stage in ("load_scenario", "simulate", "audit"):
            outcome = results.get(stage)
            if outcome is None or outcome.status != StageStatus.OK:
                error = getattr(outcome, "error", None) or f"stage {stage} did not complete"
                return {"success": False, "error": error}
        written = results.get("write_results")
        if written is not None and written.status == StageStatus.FAIL:
            return {"success": False, "error": getattr(written, "error", None) or "write_results failed"}
        return {"success": True, "result": results.get("audit").data["result"]}

    async def run_one(
        self,
        scenario: Scenario | None = None,
        scenario_path: Path | None = None,
        seed: int | None = None,
        trace_path: Path | None = None,
        out_path: Path | None = None,
    ) -> RunResult:
        """Run a single scenario. Raises ``RunFailed`` when any stage fails."""
        outcome = await self._run_pipeline({
            "scenario": scenario,
            "scenario_path": str(scenario_path) if scenario_path else None,
            "seed": seed,
            "trace_path": str(trace_path) if trace_path else None,
            "out_path": str(out_path) if out_path else None,
        })
        if not outcome["success"]:
            raise RunFailed(outcome["error"])
        return outcome["result"]

    async def _run_point(self, manager: RunManager, point: PointRun, scenario: Scenario) -> None:
        manager.mark_running(point)
        trace_path = None
        if self.config.write_traces and self.config.out_dir is not None:
            trace_path = str(self.config.out_dir / "traces" / f"{point.id}.trace")
        outcome = await self._run_pipeline({"scenario": scenario, "trace_path": trace_path})
        if outcome["success"]:
            manager.mark_completed(point, outcome["result"])
        else:
            manager.mark_failed(point, outcome["error"])

    async def sweep(self, base: Scenario, grid: SweepGrid) -> SweepOutcome:
        """Run every grid point, write the sweep tables, and return rows sorted by grid key."""
        manager = RunManager(self.config.out_dir)
        manager.subscribe(lambda e: self._emit_event(e["event"], e))
        points = []
        invalid = []
        for key in grid.keys():
            point = manager.create_point(key)
            try:
                points.append((point, grid.scenario(base, key)))
            except ScenarioError as e:
                invalid.append((point, str(e)))
        manager.start()
        for point, error in invalid:
            manager.mark_failed(point, f"Invalid scenario: {error}")

        size = self.config.batch_size
        for start in range(0, len(points), size):
            batch = points[start:start + size]
            results = await asyncio.gather(
                *(self._run_point(manager, point, scenario) for point, scenario in batch),
                return_exceptions=True,
            )
            for (point, _), result in zip(batch, results):
                if isinstance(result, Exception):
                    manager.mark_failed(point, f"{type(result).__name__}: {result}")
            logger.info(
                f"Batch complete: {min(start + size, len(points))}/{len(points)} points",
                extra=manager.get_summary().to_dict(),
            )

        manager.complete()
        rows = sorted((p.result for p in manager.get_completed_points()), key=lambda r: r.grid_key)
        outcome = SweepOutcome(results=rows, failures=manager.get_failed_points())
        if self.config.out_dir is not None:
            self.write_sweep(outcome, grid)
            outcome.out_dir = str(self.config.out_dir)
        return outcome

    def write_sweep(self, outcome: SweepOutcome, grid: SweepGrid) -> None:
        out = self.config.out_dir
        write_atomically(out / "results.csv", result_csv(outcome.results))
        write_atomically(out / "aggregates.csv", aggregates_csv(outcome.results))
        axis = swept_axis(grid)
        for metric in PLOT_METRICS:
            write_atomically(out / f"plot_{metric}.csv", plot_csv(outcome.results, metric, axis))
        write_atomically(out / "failures.csv", failures_csv(outcome.failures))
        logger.info(f"Sweep tables written to {out}", extra={"rows": outcome.rows, "failures": len(outcome.failures)})

    def subscribe(self, listener: Callable[[str, dict], None]) -> Callable[[], None]:
        """Subscribe to processor events. Returns unsubscribe function."""
        self._listeners.append(listener)
        return lambda: self._listeners.remove(listener)

    def _emit_event(self, event: str, data: dict) -> None:
        for listener in self._listeners:
            try:
                listener(event, data)
            except Exception as e:
                logger.warning(f"Event listener error: {e}")
