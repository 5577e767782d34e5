"""
Tests for the metric ledger and every metric computed from it.

The oracle tests build a twelve-packet ledger by hand and compare each
metric against values worked out by hand.
"""

import pytest

from ..metrics import (
    ConservationError,
    MetricLedger,
    avg_delay,
    compute_result,
    conservation_audit,
    efficiencies,
    pdf,
    replay,
    route_latency,
    throughput,
)
from ..models import CSV_HEADER, Disposition, FlowEcho, FrameKind, PacketRecord, RunEcho
from ..trace import TraceFormatError, TraceWriter, read_trace

DATA = 524  # 12 B header + 512 B payload


def delivered(uid, flow, sent, delay, size=512):
    return PacketRecord(uid, flow, 1, 0, sent, size, sent + delay, Disposition.DELIVERED)


def lost(uid, flow, sent, where=Disposition.DROPPED_AT_SOURCE):
    return PacketRecord(uid, flow, 1, 0, sent, 512, None, where)


def oracle_ledger(tracer=None):
    """Two flows, twelve packets: 1 -> 0 (uids 1-8) and 2 -> 4 (uids 9-12)."""
    ledger = MetricLedger(tracer)
    delays = {1: 0.010, 2: 0.020, 3: 0.030, 4: 0.040, 5: 0.050, 6: 0.060, 9: 0.005, 10: 0.015}
    for uid in range(1, 13):
        flow, source, sink = (0, 1, 0) if uid <= 8 else (1, 2, 4)
        sent = 0.5 * uid
        ledger.open_packet(sent, uid, flow, source, sink, 512)
        if uid in delays:
            ledger.mark_delivered(sent + delays[uid], uid, sink)
        elif uid in (7, 11):
            ledger.release_copy(sent, uid, source, "no_route")
        else:
            ledger.release_copy(sent + 0.001, uid, 3, "link_broken")

    for _ in range(7):
        ledger.record_tx(1.0, 1, FrameKind.DATA, DATA)
    for _ in range(2):
        ledger.record_tx(0.1, 1, FrameKind.RREQ, 24)
        ledger.record_rx(0.1, 0, FrameKind.RREQ, 24, 1)
    for _ in range(3):
        ledger.record_tx(5.0, 2, FrameKind.DATA, DATA)
    ledger.record_tx(4.5, 2, FrameKind.QRY, 20)
    for _ in range(4):
        ledger.record_tx(2.0, 3, FrameKind.DATA, DATA)
    ledger.record_tx(4.0, 3, FrameKind.RERR, 20)
    ledger.record_tx(0.2, 0, FrameKind.RREP, 24)
    for _ in range(6):
        ledger.record_rx(1.0, 0, FrameKind.DATA, DATA, 3)
    for _ in range(2):
        ledger.record_rx(5.0, 4, FrameKind.DATA, DATA, 2)
    ledger.record_rx(4.6, 4, FrameKind.UPD, 28, 2)
    return ledger


ECHO = RunEcho(
    protocol="pdsr", nodes=5, speed_class="slow", pause_s=0.0, seed=1, duration_s=10.0,
    flows=(FlowEcho(0, 1, 0), FlowEcho(1, 2, 4)),
)


class TestPdf:
    """Unweighted per-flow mean of delivered/sent."""

    def test_single_flow_all_delivered(self):
        records = [delivered(i, 0, 0.0, 0.01) for i in range(100)]
        assert pdf(records) == (1.0, [])

    def test_flows_weighted_equally(self):
        records = [delivered(i, 0, 0.0, 0.01) for i in range(100)]
        records += [lost(100 + i, 1, 0.0) for i in range(100)]
        assert pdf(records)[0] == 0.5

    def test_three_flow_mean(self):
        records = []
        for flow, ok in enumerate((90, 50, 10)):
            records += [delivered(1000 * flow + i, flow, 0.0, 0.01) for i in range(ok)]
            records += [lost(1000 * flow + 500 + i, flow, 0.0) for i in range(100 - ok)]
        assert pdf(records)[0] == pytest.approx(0.5, rel=1e-12)

    def test_silent_flow_excluded(self):
        value, excluded = pdf([delivered(1, 0, 0.0, 0.01)], flow_ids=[0, 7])
        assert value == 1.0
        assert excluded == [7]

    def test_nothing_sent_is_not_measurable(self):
        assert pdf([], flow_ids=[0]) == (None, [0])


class TestAvgDelay:
    """Mean delay over delivered packets, in milliseconds."""

    def test_mean_of_delays(self):
        records = [delivered(1, 0, 1.0, 0.010), delivered(2, 0, 2.0, 0.020), delivered(3, 0, 3.0, 0.030)]
        assert avg_delay(records) == pytest.approx(20.0, rel=1e-12)

    def test_drops_do_not_count(self):
        records = [delivered(1, 0, 0.0, 0.004), lost(2, 0, 0.0)]
        assert avg_delay(records) == pytest.approx(4.0, rel=1e-12)

    def test_nothing_delivered_is_not_measurable(self):
        assert avg_delay([lost(1, 0, 0.0)]) is None


class TestThroughput:
    """Delivered data bytes per second at the sink, in kB/s."""

    def test_reference_rate(self):
        records = [delivered(i, 0, 0.0, 0.01, size=5000) for i in range(400)]
        assert throughput(0, records, 200.0) == pytest.approx(10.0, rel=1e-12)

    def test_small_packets(self):
        records = [delivered(i, 0, 0.0, 0.01) for i in range(400)]
        assert throughput(0, records, 100.0) == pytest.approx(2.048, rel=1e-12)

    def test_nothing_delivered(self):
        assert throughput(0, [lost(1, 0, 0.0)], 200.0) == 0.0

    def test_other_sinks_ignored(self):
        assert throughput(5, [delivered(1, 0, 0.0, 0.01)], 1.0) == 0.0

    def test_duration_must_be_positive(self):
        with pytest.raises(ValueError, match="duration"):
            throughput(0, [], 0.0)


class TestEfficiencies:
    """Byte-efficiency ratios and their not-measurable cases."""

    def test_no_control_traffic(self):
        ledger = MetricLedger()
        ledger.record_tx(0.0, 1, FrameKind.DATA, 100)
        ledger.record_rx(0.0, 0, FrameKind.DATA, 100, 1)
        assert tuple(efficiencies(ledger, [0], [1])) == (100.0, 100.0, 100.0)

    def test_receiving_efficiency(self):
        ledger = MetricLedger()
        ledger.record_rx(0.0, 0, FrameKind.DATA, 9900, 1)
        ledger.record_rx(0.0, 0, FrameKind.RREQ, 100, 1)
        assert efficiencies(ledger, [0], [1]).recv == pytest.approx(99.0, rel=1e-12)

    def test_network_overhead_three_to_one(self):
        ledger = MetricLedger()
        ledger.record_tx(0.0, 3, FrameKind.DATA, 50_000)
        ledger.record_tx(0.0, 4, FrameKind.UPD, 150_000)
        assert efficiencies(ledger, [0], [1]).fwd == pytest.approx(25.0, rel=1e-12)

    def test_empty_ledger_not_measurable(self):
        assert tuple(efficiencies(MetricLedger(), [0], [1])) == (None, None, None)


class TestConservation:
    """Every generated packet has exactly one disposition."""

    def test_split_between_source_and_transit(self):
        records = [delivered(1, 0, 0.0, 0.1), lost(2, 0, 0.0), lost(3, 0, 0.0, Disposition.DROPPED_IN_TRANSIT)]
        report = conservation_audit(records)
        assert (report.generated, report.delivered, report.lost) == (3, 1, 2)
        assert report.source_loss_share == 50.0
        assert report.per_flow[0] == {"generated": 3, "delivered": 1, "lost": 2}

    def test_open_packet_fails_audit(self):
        record = PacketRecord(1, 0, 1, 0, 0.0, 512)
        with pytest.raises(ConservationError, match="no disposition"):
            conservation_audit([record])

    def test_delivery_without_receive_time_fails(self):
        record = PacketRecord(1, 0, 1, 0, 0.0, 512, None, Disposition.DELIVERED)
        with pytest.raises(ConservationError, match="receive time"):
            conservation_audit([record])

    def test_end_of_run_closes_open_packets(self):
        ledger = MetricLedger()
        ledger.open_packet(0.0, 1, 0, 1, 0, 512)
        ledger.open_packet(0.0, 2, 0, 1, 0, 512)
        ledger.record_rx(0.1, 3, FrameKind.DATA, DATA, 1, uid=2)
        assert ledger.close_open(10.0) == 2
        assert ledger.records[1].disposition is Disposition.DROPPED_AT_SOURCE
        assert ledger.records[2].disposition is Disposition.DROPPED_IN_TRANSIT
        assert ledger.records[2].drop_node == 3

    def test_last_copy_closes_record(self):
        ledger = MetricLedger()
        ledger.open_packet(0.0, 1, 0, 1, 0, 512)
        ledger.add_copy(1)
        ledger.release_copy(0.5, 1, 3, "link_broken")
        assert ledger.records[1].disposition is None
        assert ledger.mark_delivered(0.6, 1, 0) is True
        assert ledger.mark_delivered(0.7, 1, 0) is False
        assert ledger.records[1].received_at == 0.6


class TestRouteLatency:
    """Median time from first request to first usable route."""

    def test_median_in_milliseconds(self):
        ledger = MetricLedger()
        for node, (start, ready) in enumerate([(0.0, 0.1), (1.0, 1.3), (2.0, 2.2)]):
            ledger.discovery_started(start, node, 9)
            ledger.discovery_completed(ready, node, 9)
        assert route_latency(ledger) == pytest.approx(200.0, rel=1e-9)

    def test_repeated_start_keeps_first_time(self):
        ledger = MetricLedger()
        ledger.discovery_started(1.0, 0, 9)
        ledger.discovery_started(2.0, 0, 9)
        ledger.discovery_completed(2.5, 0, 9)
        assert ledger.latencies == [1.5]

    def test_no_discovery_is_not_measurable(self):
        assert route_latency(MetricLedger()) is None


class TestOracle:
    """Twelve hand-built packets against hand-computed metric values."""

    def test_all_metrics(self):
        result = compute_result(ECHO, oracle_ledger())
        assert result.pdf == pytest.approx((6 / 8 + 2 / 4) / 2, rel=1e-12)
        assert result.pct_delivered == pytest.approx(100.0 * 8 / 12, rel=1e-12)
        assert result.avg_delay_ms == pytest.approx(230.0 / 8, rel=1e-12)
        assert result.throughput_kBps == pytest.approx(8 * 512 / 10.0 / 1000.0, rel=1e-12)
        assert result.recv_eff == pytest.approx(100.0 * 4192 / (4192 + 76), rel=1e-12)
        assert result.send_eff == pytest.approx(100.0 * 5240 / (5240 + 68), rel=1e-12)
        assert result.fwd_eff == pytest.approx(100.0 * 7336 / (7336 + 112), rel=1e-12)

    def test_counts_and_drop_split(self):
        result = compute_result(ECHO, oracle_ledger())
        assert (result.data_sent, result.data_delivered) == (12, 8)
        assert (result.drop_source, result.drop_transit) == (2, 2)
        assert result.drops_by_node == {1: 1, 2: 1, 3: 2}
        assert (result.ctrl_pkts, result.ctrl_bytes) == (5, 112)
        assert result.control_by_kind["RREQ"] == {"packets": 2, "bytes": 48}

    def test_throughput_identity(self):
        result = compute_result(ECHO, oracle_ledger())
        assert result.throughput_kBps * 1000.0 * ECHO.duration_s == pytest.approx(8 * 512, rel=1e-12)

    def test_row_formatting(self):
        row = compute_result(ECHO, oracle_ledger()).to_row()
        assert len(row) == len(CSV_HEADER)
        assert row[:5] == ["pdsr", "5", "slow", "0.000000", "1"]
        assert row[6] == "66.666667"

    def test_not_measurable_cells(self):
        ledger = MetricLedger()
        ledger.open_packet(0.0, 1, 0, 1, 0, 512)
        ledger.close_open(10.0)
        echo = RunEcho("tora", 10, "fast", 0.0, 1, 10.0, (FlowEcho(0, 1, 0),))
        row = dict(zip(CSV_HEADER, compute_result(echo, ledger).to_row()))
        assert row["throughput_kBps"] == "0.000000"
        assert row["pct_delivered"] == "0.000000"
        assert row["avg_delay_ms"] == "NM"
        assert (row["recv_eff"], row["send_eff"], row["fwd_eff"]) == ("NM", "NM", "NM")


class TestReplay:
    """A ledger rebuilt from its trace yields the same row."""

    def test_replay_matches(self):
        tracer = TraceWriter(keep=True)
        tracer.emit(0.0, "sys", "scenario", protocol="pdsr", nodes=5, speed_class="slow",
                    pause=0.0, seed=1, duration=10.0)
        tracer.emit(0.0, "sys", "flow", id=0, src=1, dst=0)
        tracer.emit(0.0, "sys", "flow", id=1, src=2, dst=4)
        original = compute_result(ECHO, oracle_ledger(tracer))
        replayed = replay(read_trace(tracer.lines))
        assert replayed.to_row() == original.to_row()
        assert replayed.drops_by_node == original.drops_by_node

    def test_missing_header_rejected(self):
        with pytest.raises(TraceFormatError, match="header"):
            replay(read_trace(["t=0.000000 node=1 ev=tx kind=data bytes=10 dst=0"]))

    def test_malformed_line_rejected(self):
        with pytest.raises(TraceFormatError, match="line 1"):
            read_trace(["garbage"])
