"""
Tests for the pipeline stages, the scenario processor and the sweep
tables it writes.
"""

import csv
import json
from pathlib import Path
from unittest.mock import MagicMock

import pytest

pytest.importorskip("stageflow")

from ..config import MobilityModel, ProcessorConfig, Protocol, Scenario, SweepGrid
from ..models import CSV_HEADER, NOT_MEASURABLE
from ..processor import RunFailed, ScenarioProcessor, aggregates_csv, plot_csv, swept_axis
from ..run_manager import STATE_FILE
from ..simulation import run_scenario
from ..stages import AuditStage, LoadScenarioStage, SimulateStage, WriteResultsStage

PAIR = Scenario(
    protocol=Protocol.PDSR, nodes=2, mobility=MobilityModel.STATIC,
    positions=((0.0, 0.0), (100.0, 0.0)), duration_s=5.0,
)


def mock_context(metadata=None, inputs=None):
    ctx = MagicMock()
    ctx.snapshot.metadata = metadata or {}
    values = inputs or {}
    ctx.inputs.get_from = MagicMock(
        side_effect=lambda stage, key, default=None: values.get((stage, key), default)
    )
    ctx.try_emit_event = MagicMock()
    return ctx


def read_csv(path):
    with open(path, newline="", encoding="utf-8") as f:
        return list(csv.reader(f))


class TestLoadScenarioStage:
    """Resolves a Scenario from metadata."""

    @pytest.mark.asyncio
    async def test_parses_file_and_overrides_seed(self, tmp_path):
        path = tmp_path / "s.scn"
        path.write_text("protocol = dsr\nnodes = 4\nseed = 1\n")
        result = await LoadScenarioStage().execute(mock_context({"scenario_path": str(path), "seed": 9}))
        assert result.status.value == "ok"
        assert result.data["scenario"].protocol is Protocol.DSR
        assert result.data["seed"] == 9

    @pytest.mark.asyncio
    async def test_missing_scenario(self):
        result = await LoadScenarioStage().execute(mock_context({}))
        assert result.status.value == "fail"
        assert result.data["error_type"] == "MISSING_SCENARIO"

    @pytest.mark.asyncio
    async def test_missing_file(self, tmp_path):
        result = await LoadScenarioStage().execute(mock_context({"scenario_path": str(tmp_path / "x.scn")}))
        assert result.status.value == "fail"
        assert result.data["error_type"] == "FILE_NOT_FOUND"

    @pytest.mark.asyncio
    async def test_bad_key_reports_line(self, tmp_path):
        path = tmp_path / "s.scn"
        path.write_text("nodes = 4\nprotocl = tora\n")
        result = await LoadScenarioStage().execute(mock_context({"scenario_path": str(path)}))
        assert result.status.value == "fail"
        assert "unknown key 'protocl' at line 2" in result.error
        assert result.data["line"] == 2


class TestSimulateStage:
    """Runs the simulator and passes records downstream."""

    @pytest.mark.asyncio
    async def test_runs_and_writes_trace(self, tmp_path):
        trace = tmp_path / "run.trace"
        ctx = mock_context({"trace_path": str(trace)}, {("load_scenario", "scenario"): PAIR})
        result = await SimulateStage().execute(ctx)
        assert result.status.value == "ok"
        assert result.data["result"].data_sent == 20
        assert len(result.data["records"]) == 20
        assert trace.read_text().startswith("t=0.000000 node=sys ev=scenario")

    @pytest.mark.asyncio
    async def test_no_scenario(self):
        result = await SimulateStage().execute(mock_context())
        assert result.status.value == "fail"


class TestAuditStage:
    """Guards packet conservation."""

    @pytest.mark.asyncio
    async def test_passes_consistent_run(self):
        from ..simulation import Network

        net = Network(PAIR)
        result = net.run()
        records = list(net.ledger.records.values())
        ctx = mock_context(inputs={("simulate", "result"): result, ("simulate", "records"): records})
        output = await AuditStage().execute(ctx)
        assert output.status.value == "ok"
        assert output.data["audited"] is True

    @pytest.mark.asyncio
    async def test_rejects_open_packet(self):
        from ..simulation import Network

        net = Network(PAIR)
        result = net.run()
        records = list(net.ledger.records.values())
        records[0].disposition = None
        ctx = mock_context(inputs={("simulate", "result"): result, ("simulate", "records"): records})
        output = await AuditStage().execute(ctx)
        assert output.status.value == "fail"
        assert output.data["error_type"] == "CONSERVATION"


class TestWriteResultsStage:
    """Writes the CSV row and its JSON sibling."""

    @pytest.mark.asyncio
    async def test_writes_csv_and_json(self, tmp_path):
        result = run_scenario(PAIR)
        out = tmp_path / "row.csv"
        ctx = mock_context({"out_path": str(out)}, {
            ("audit", "result"): result,
            ("audit", "source_loss_share"): None,
            ("audit", "transit_loss_share"): None,
        })
        output = await WriteResultsStage().execute(ctx)
        assert output.status.value == "ok"
        rows = read_csv(out)
        assert tuple(rows[0]) == CSV_HEADER
        assert rows[1] == result.to_row()
        summary = json.loads((tmp_path / "row.json").read_text())
        assert summary["protocol"] == "pdsr"
        assert "control_by_kind" in summary

    @pytest.mark.asyncio
    async def test_skips_without_out_path(self):
        output = await WriteResultsStage().execute(mock_context())
        assert output.status.value == "skip"


class TestScenarioProcessor:
    """Full pipeline runs and sweeps."""

    @pytest.mark.asyncio
    async def test_run_one(self, tmp_path):
        processor = ScenarioProcessor()
        result = await processor.run_one(scenario=PAIR, out_path=tmp_path / "r.csv")
        assert result.pdf == 1.0
        assert (tmp_path / "r.csv").exists()

    @pytest.mark.asyncio
    async def test_run_one_failure_raises(self, tmp_path):
        with pytest.raises(RunFailed):
            await ScenarioProcessor().run_one(scenario_path=tmp_path / "missing.scn")

    @pytest.mark.asyncio
    async def test_sweep_writes_tables(self, tmp_path):
        base = Scenario(duration_s=5.0, area_x=300.0, area_y=300.0)
        grid = SweepGrid(nodes=[4], speeds=["slow"], pauses=[0.0, 2.0], seeds=[1, 2])
        processor = ScenarioProcessor(ProcessorConfig(out_dir=tmp_path, batch_size=3))
        outcome = await processor.sweep(base, grid)

        assert outcome.rows == 8
        assert outcome.failures == []
        assert [r.grid_key for r in outcome.results] == sorted(r.grid_key for r in outcome.results)
        rows = read_csv(tmp_path / "results.csv")
        assert len(rows) == 9
        plot = read_csv(tmp_path / "plot_pdf.csv")
        assert plot[0] == ["pause_s", "pdsr", "tora"]
        assert [row[0] for row in plot[1:]] == ["0.000000", "2.000000"]
        assert read_csv(tmp_path / "failures.csv") == [
            ["point", "protocol", "nodes", "speed_class", "pause_s", "seed", "error"]
        ]
        state = json.loads((tmp_path / STATE_FILE).read_text())
        assert state["summary"]["completed"] == 8

    @pytest.mark.asyncio
    async def test_failed_point_is_recorded_not_fatal(self, tmp_path):
        base = Scenario(duration_s=5.0, flows=1, flow_src=(3,), flow_dst=(0,))
        grid = SweepGrid(nodes=[2, 4], speeds=["slow"], pauses=[0.0], seeds=[1], protocols=["tora"])
        processor = ScenarioProcessor(ProcessorConfig(out_dir=tmp_path))
        outcome = await processor.sweep(base, grid)
        assert outcome.rows == 1
        assert len(outcome.failures) == 1
        failures = read_csv(tmp_path / "failures.csv")
        assert failures[1][:3] == ["tora-2-slow-0.0-1", "tora", "2"]


class TestSweepTables:
    """Aggregate and plot tables from finished rows."""

    def rows(self):
        base = Scenario(duration_s=5.0)
        out = []
        for protocol in (Protocol.TORA, Protocol.PDSR):
            for seed in (1, 2):
                out.append(run_scenario(base.with_overrides(protocol=protocol, seed=seed, nodes=3)))
        return out

    def test_aggregates_have_mean_min_max(self):
        table = list(csv.reader(aggregates_csv(self.rows()).splitlines()))
        assert table[0] == ["protocol", "nodes", "speed_class", "pause_s", "metric", "n", "mean", "min", "max"]
        pdf_rows = [row for row in table[1:] if row[4] == "pdf"]
        assert [row[0] for row in pdf_rows] == ["pdsr", "tora"]
        for row in pdf_rows:
            assert float(row[7]) <= float(row[6]) <= float(row[8])

    def test_plot_has_one_series_per_protocol(self):
        table = list(csv.reader(plot_csv(self.rows(), "avg_delay_ms", "nodes").splitlines()))
        assert table[0] == ["nodes", "pdsr", "tora"]
        assert len(table) == 2

    def test_swept_axis_picks_varying_parameter(self):
        assert swept_axis(SweepGrid(nodes=[10, 30], speeds=["slow"], pauses=[0.0], seeds=[1])) == "nodes"
        assert swept_axis(SweepGrid(nodes=[50], speeds=["fast"], pauses=[0.0, 25.0], seeds=[1])) == "pause_s"
        assert NOT_MEASURABLE == "NM"
