"""
Metric ledger and the metric functions computed from it.

The ledger is the only place counters change. Every metric is a pure pass
over a finished ledger, so a ledger rebuilt from a trace yields the same
result row.
"""

from __future__ import annotations

import math
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from typing import Iterable, NamedTuple

import numpy as np

from .models import Disposition, FlowEcho, FrameKind, PacketRecord, RunEcho, RunResult
from .trace import TraceFormatError, TraceRecord, TraceWriter
from .utils.logger import get_logger

logger = get_logger("metrics")


class ConservationError(AssertionError):
    """A generated packet does not have exactly one disposition."""


@dataclass
class NodeCounters:
    data_rx: int = 0
    ctrl_rx: int = 0
    data_tx: int = 0
    ctrl_tx: int = 0


class MetricLedger:
    """Per-node byte counters, per-kind control totals and per-packet records."""

    def __init__(self, tracer: TraceWriter | None = None):
        self.tracer = tracer
        self.nodes: defaultdict[int, NodeCounters] = defaultdict(NodeCounters)
        self.kind_packets: Counter[str] = Counter()
        self.kind_bytes: Counter[str] = Counter()
        self.records: dict[int, PacketRecord] = {}
        self.latencies: list[float] = []
        self.loop_violations = 0
        self._copies: dict[int, int] = {}
        self._location: dict[int, int] = {}
        self._discovery_open: dict[tuple[int, int], float] = {}

    # -- transmissions -------------------------------------------------

    def record_tx(self, t: float, node: int, kind: FrameKind, size: int, dst: int | None = None) -> None:
        counters = self.nodes[node]
        if kind.is_control:
            counters.ctrl_tx += size
        else:
            counters.data_tx += size
        self.kind_packets[kind.value] += 1
        self.kind_bytes[kind.value] += size
        if self.tracer:
            self.tracer.emit(t, node, "tx", kind=kind, bytes=size, dst="*" if dst is None else dst)

    def record_rx(
        self, t: float, node: int, kind: FrameKind, size: int, sender: int, uid: int | None = None
    ) -> None:
        counters = self.nodes[node]
        if kind.is_control:
            counters.ctrl_rx += size
        else:
            counters.data_rx += size
            if uid is not None:
                self._location[uid] = node
        if self.tracer:
            self.tracer.emit(t, node, "rx", kind=kind, bytes=size, sender=sender)

    # -- packet lifecycle ----------------------------------------------

    def open_packet(self, t: float, uid: int, flow_id: int, source: int, sink: int, size: int) -> PacketRecord:
        record = PacketRecord(uid, flow_id, source, sink, t, size)
        self.records[uid] = record
        self._copies[uid] = 1
        self._location[uid] = source
        if self.tracer:
            self.tracer.emit(t, source, "pkt_open", uid=uid, flow=flow_id, dst=sink, bytes=size, at=t)
        return record

    def add_copy(self, uid: int) -> None:
        self._copies[uid] = self._copies.get(uid, 0) + 1

    def recall(self, uid: int, node: int) -> None:
        """A refused data frame stays with ``node``."""
        self._location[uid] = node

    def mark_delivered(self, t: float, uid: int, node: int) -> bool:
        """Close the record as delivered. False for a duplicate copy."""
        record = self.records[uid]
        if record.disposition is not None:
            return False
        record.received_at = t
        record.disposition = Disposition.DELIVERED
        self._copies[uid] = max(self._copies.get(uid, 1) - 1, 0)
        if self.tracer:
            self.tracer.emit(t, node, "pkt_deliver", uid=uid, at=t)
        return True

    def release_copy(self, t: float, uid: int, node: int, reason: str) -> None:
        """One copy of a packet was dropped; the last copy closes the record."""
        remaining = self._copies.get(uid, 1) - 1
        self._copies[uid] = max(remaining, 0)
        record = self.records[uid]
        if self.tracer:
            self.tracer.emit(t, node, "copy_drop", uid=uid, reason=reason)
        if record.disposition is None and remaining <= 0:
            where = Disposition.DROPPED_AT_SOURCE if node == record.source else Disposition.DROPPED_IN_TRANSIT
            self.mark_dropped(t, uid, node, where, reason)

    def mark_dropped(self, t: float, uid: int, node: int, disposition: Disposition, reason: str = "") -> None:
        record = self.records[uid]
        record.disposition = disposition
        record.drop_node = node
        if self.tracer:
            self.tracer.emit(t, node, "pkt_drop", uid=uid, where=disposition, reason=reason or "-", at=t)

    def close_open(self, t: float) -> int:
        """Close packets still buffered or in flight when the run ends."""
        closed = 0
        for uid in sorted(self.records):
            record = self.records[uid]
            if record.disposition is not None:
                continue
            node = self._location.get(uid, record.source)
            where = Disposition.DROPPED_AT_SOURCE if node == record.source else Disposition.DROPPED_IN_TRANSIT
            self.mark_dropped(t, uid, node, where, "end_of_run")
            closed += 1
        return closed

    # -- route creation ------------------------------------------------

    def discovery_started(self, t: float, node: int, dest: int) -> None:
        key = (node, dest)
        if key in self._discovery_open:
            return
        self._discovery_open[key] = t
        if self.tracer:
            self.tracer.emit(t, node, "route_start", dest=dest, at=t)

    def discovery_completed(self, t: float, node: int, dest: int) -> None:
        started = self._discovery_open.pop((node, dest), None)
        if started is None:
            return
        self.latencies.append(t - started)
        if self.tracer:
            self.tracer.emit(t, node, "route_ready", dest=dest, at=t, latency=t - started)

    def loop_violation(self, t: float, node: int, uid: int) -> None:
        self.loop_violations += 1
        logger.warning(f"loop-freedom violation at node {node}", extra={"uid": uid, "t": t})
        if self.tracer:
            self.tracer.emit(t, node, "loop_violation", uid=uid)

    # -- replay --------------------------------------------------------

    def apply(self, rec: TraceRecord) -> None:
        """Re-apply one trace record; unknown events are protocol detail and ignored."""
        ev = rec.ev
        if ev == "tx":
            self.record_tx(0.0, rec.node_id, FrameKind(rec.fields["kind"]), rec.int("bytes"))
        elif ev == "rx":
            self.record_rx(0.0, rec.node_id, FrameKind(rec.fields["kind"]), rec.int("bytes"), rec.int("sender"))
        elif ev == "pkt_open":
            self.open_packet(rec.float("at"), rec.int("uid"), rec.int("flow"), rec.node_id, rec.int("dst"), rec.int("bytes"))
        elif ev == "pkt_deliver":
            self.mark_delivered(rec.float("at"), rec.int("uid"), rec.node_id)
        elif ev == "pkt_drop":
            self.mark_dropped(rec.float("at"), rec.int("uid"), rec.node_id, Disposition(rec.fields["where"]), rec.fields.get("reason", ""))
        elif ev == "route_start":
            self.discovery_started(rec.float("at"), rec.node_id, rec.int("dest"))
        elif ev == "route_ready":
            self.discovery_completed(rec.float("at"), rec.node_id, rec.int("dest"))
        elif ev == "loop_violation":
            self.loop_violations += 1


class Efficiencies(NamedTuple):
    recv: float | None
    send: float | None
    fwd: float | None


@dataclass
class AuditReport:
    generated: int
    delivered: int
    dropped_at_source: int
    dropped_in_transit: int
    per_flow: dict[int, dict[str, int]] = field(default_factory=dict)
    drops_by_node: dict[int, int] = field(default_factory=dict)

    @property
    def lost(self) -> int:
        return self.dropped_at_source + self.dropped_in_transit

    @property
    def source_loss_share(self) -> float | None:
        return None if self.lost == 0 else 100.0 * self.dropped_at_source / self.lost

    @property
    def transit_loss_share(self) -> float | None:
        return None if self.lost == 0 else 100.0 * self.dropped_in_transit / self.lost


def _ratio(numerator: int, denominator: int) -> float | None:
    return None if denominator == 0 else 100.0 * numerator / denominator


def pdf(records: Iterable[PacketRecord], flow_ids: Iterable[int] | None = None) -> tuple[float | None, list[int]]:
    """Unweighted mean over flows of delivered/sent; flows that sent nothing are excluded and returned."""
    sent: Counter[int] = Counter()
    delivered: Counter[int] = Counter()
    for record in records:
        sent[record.flow_id] += 1
        if record.disposition is Disposition.DELIVERED:
            delivered[record.flow_id] += 1
    flows = sorted(set(flow_ids) | set(sent)) if flow_ids is not None else sorted(sent)
    excluded = [f for f in flows if sent[f] == 0]
    counted = [f for f in flows if sent[f] > 0]
    if not counted:
        return None, excluded
    return math.fsum(delivered[f] / sent[f] for f in counted) / len(counted), excluded


def avg_delay(records: Iterable[PacketRecord]) -> float | None:
    """Mean end-to-end delay of delivered packets in milliseconds; None (NM) when nothing arrived."""
    delays = [r.delay for r in records if r.disposition is Disposition.DELIVERED]
    if not delays:
        return None
    return math.fsum(delays) / len(delays) * 1000.0


def throughput(sink: int | Iterable[int], records: Iterable[PacketRecord], duration: float) -> float:
    """Data bytes delivered to the sink application per second, in kB/s (1 kB = 1000 B)."""
    if duration <= 0:
        raise ValueError(f"duration must be > 0, got {duration}")
    sinks = {sink} if isinstance(sink, int) else set(sink)
    total = sum(r.bytes for r in records if r.disposition is Disposition.DELIVERED and r.sink in sinks)
    return total / duration / 1000.0


def efficiencies(ledger: MetricLedger, sinks: Iterable[int], sources: Iterable[int]) -> Efficiencies:
    """Receiving efficiency at the sinks, sending efficiency at the sources, forwarding efficiency network-wide."""
    sink_nodes = [ledger.nodes[n] for n in sorted(set(sinks)) if n in ledger.nodes]
    source_nodes = [ledger.nodes[n] for n in sorted(set(sources)) if n in ledger.nodes]
    data_rx = sum(c.data_rx for c in sink_nodes)
    ctrl_rx = sum(c.ctrl_rx for c in sink_nodes)
    data_tx = sum(c.data_tx for c in source_nodes)
    ctrl_tx = sum(c.ctrl_tx for c in source_nodes)
    net_data = sum(c.data_tx for c in ledger.nodes.values())
    net_ctrl = sum(c.ctrl_tx for c in ledger.nodes.values())
    return Efficiencies(
        recv=_ratio(data_rx, data_rx + ctrl_rx),
        send=_ratio(data_tx, data_tx + ctrl_tx),
        fwd=_ratio(net_data, net_data + net_ctrl),
    )


def conservation_audit(records: Iterable[PacketRecord]) -> AuditReport:
    """Check every packet has exactly one disposition; split losses between source and transit."""
    report = AuditReport(0, 0, 0, 0)
    for record in records:
        report.generated += 1
        flow = report.per_flow.setdefault(record.flow_id, {"generated": 0, "delivered": 0, "lost": 0})
        flow["generated"] += 1
        if record.disposition is None:
            raise ConservationError(f"packet {record.uid} of flow {record.flow_id} has no disposition")
        if record.disposition is Disposition.DELIVERED:
            if record.received_at is None or record.received_at < record.sent_at:
                raise ConservationError(f"packet {record.uid} delivered without a valid receive time")
            report.delivered += 1
            flow["delivered"] += 1
            continue
        if record.received_at is not None:
            raise ConservationError(f"packet {record.uid} is both received and dropped")
        flow["lost"] += 1
        if record.disposition is Disposition.DROPPED_AT_SOURCE:
            report.dropped_at_source += 1
        else:
            report.dropped_in_transit += 1
        if record.drop_node is not None:
            report.drops_by_node[record.drop_node] = report.drops_by_node.get(record.drop_node, 0) + 1
    return report


def route_latency(ledger: MetricLedger) -> float | None:
    """Median route-creation latency in milliseconds."""
    if not ledger.latencies:
        return None
    return float(np.median(np.asarray(ledger.latencies))) * 1000.0


def compute_result(echo: RunEcho, ledger: MetricLedger) -> RunResult:
    """Build the result row of a finished run."""
    records = [ledger.records[uid] for uid in sorted(ledger.records)]
    audit = conservation_audit(records)
    flow_pdf, excluded = pdf(records, [f.id for f in echo.flows])
    eff = efficiencies(ledger, echo.sinks, echo.sources)
    control = {
        kind: {"packets": ledger.kind_packets[kind], "bytes": ledger.kind_bytes[kind]}
        for kind in sorted(ledger.kind_packets)
        if kind != FrameKind.DATA.value
    }
    return RunResult(
        echo=echo,
        throughput_kBps=throughput(echo.sinks, records, echo.duration_s),
        pct_delivered=_ratio(audit.delivered, audit.generated),
        pdf=flow_pdf,
        avg_delay_ms=avg_delay(records),
        recv_eff=eff.recv,
        send_eff=eff.send,
        fwd_eff=eff.fwd,
        ctrl_pkts=sum(v["packets"] for v in control.values()),
        ctrl_bytes=sum(v["bytes"] for v in control.values()),
        data_sent=audit.generated,
        data_delivered=audit.delivered,
        drop_source=audit.dropped_at_source,
        drop_transit=audit.dropped_in_transit,
        control_by_kind=control,
        drops_by_node=audit.drops_by_node,
        excluded_flows=excluded,
        route_latency_ms=route_latency(ledger),
        discoveries=len(ledger.latencies) + len(ledger._discovery_open),
        loop_violations=ledger.loop_violations,
    )


def replay(records: Iterable[TraceRecord]) -> RunResult:
    """Rebuild the ledger from trace records and recompute the result row."""
    ledger = MetricLedger()
    header: TraceRecord | None = None
    flows: list[FlowEcho] = []
    for rec in records:
        if rec.ev == "scenario":
            header = rec
        elif rec.ev == "flow":
            flows.append(FlowEcho(rec.int("id"), rec.int("src"), rec.int("dst")))
        else:
            ledger.apply(rec)
    if header is None:
        raise TraceFormatError("trace has no ev=scenario header line")
    echo = RunEcho(
        protocol=header.fields["protocol"],
        nodes=header.int("nodes"),
        speed_class=header.fields["speed_class"],
        pause_s=header.float("pause"),
        seed=header.int("seed"),
        duration_s=header.float("duration"),
        flows=tuple(flows),
    )
    return compute_result(echo, ledger)
