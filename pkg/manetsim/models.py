"""
Data models for the MANET simulator.

Frames and packets move through the simulated network; records, results
and sweep bookkeeping describe what happened to them.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from datetime import datetime
from enum import Enum
from typing import Any

CSV_HEADER: tuple[str, ...] = (
    "protocol", "nodes", "speed_class", "pause_s", "seed",
    "throughput_kBps", "pct_delivered", "pdf", "avg_delay_ms",
    "recv_eff", "send_eff", "fwd_eff",
    "ctrl_pkts", "ctrl_bytes", "data_sent", "data_delivered",
    "drop_source", "drop_transit",
)

NOT_MEASURABLE = "NM"


def format_metric(value: float | int | None) -> str:
    """Render a result cell: ``NM`` for not measurable, six decimals for floats."""
    if value is None:
        return NOT_MEASURABLE
    if isinstance(value, bool):
        return str(int(value))
    if isinstance(value, int):
        return str(value)
    return f"{value:.6f}"


class FrameKind(str, Enum):
    """Everything that can be put on the air."""
    DATA = "data"
    RREQ = "RREQ"
    RREP = "RREP"
    RERR = "RERR"
    WARNING = "Warning"
    ACK = "Ack"
    QRY = "QRY"
    UPD = "UPD"
    CLR = "CLR"

    @property
    def is_control(self) -> bool:
        return self is not FrameKind.DATA


class Disposition(str, Enum):
    """Final fate of a generated data packet."""
    DELIVERED = "delivered"
    DROPPED_AT_SOURCE = "dropped-at-source"
    DROPPED_IN_TRANSIT = "dropped-in-transit"


@dataclass
class DataPacket:
    """
    An application packet in flight.

    Source-routed protocols fill ``route``; ``trail`` lists every node that
    forwarded this copy.
    """
    uid: int
    flow_id: int
    source: int
    dest: int
    payload_bytes: int
    created_at: float
    route: tuple[int, ...] | None = None
    salvaged: bool = False
    wants_ack: bool = False
    on_backup: bool = False
    trail: list[int] = field(default_factory=list)

    def duplicate(self) -> "DataPacket":
        """Independent copy sharing the uid (for dual-path transmission)."""
        return DataPacket(
            uid=self.uid,
            flow_id=self.flow_id,
            source=self.source,
            dest=self.dest,
            payload_bytes=self.payload_bytes,
            created_at=self.created_at,
            route=self.route,
            salvaged=self.salvaged,
            trail=list(self.trail),
        )


@dataclass(frozen=True)
class Frame:
    """Anything transmitted on the medium. ``dst`` is None for broadcasts."""
    kind: FrameKind
    src: int
    sender: int
    dst: int | None
    size: int
    payload: Any
    uid: int

    @property
    def is_broadcast(self) -> bool:
        return self.dst is None


@dataclass
class PacketRecord:
    """Send/receive bookkeeping for one generated data packet."""
    uid: int
    flow_id: int
    source: int
    sink: int
    sent_at: float
    bytes: int
    received_at: float | None = None
    disposition: Disposition | None = None
    drop_node: int | None = None

    @property
    def delay(self) -> float | None:
        if self.received_at is None:
            return None
        return self.received_at - self.sent_at


@dataclass(frozen=True)
class FlowEcho:
    id: int
    source: int
    sink: int


@dataclass(frozen=True)
class RunEcho:
    """The slice of a scenario a result row needs; replayable from a trace."""
    protocol: str
    nodes: int
    speed_class: str
    pause_s: float
    seed: int
    duration_s: float
    flows: tuple[FlowEcho, ...] = ()

    @property
    def sinks(self) -> list[int]:
        return sorted({f.sink for f in self.flows})

    @property
    def sources(self) -> list[int]:
        return sorted({f.source for f in self.flows})


@dataclass
class RunResult:
    """Every metric of one (scenario, seed) run."""
    echo: RunEcho
    throughput_kBps: float
    pct_delivered: float | None
    pdf: float | None
    avg_delay_ms: float | None
    recv_eff: float | None
    send_eff: float | None
    fwd_eff: float | None
    ctrl_pkts: int
    ctrl_bytes: int
    data_sent: int
    data_delivered: int
    drop_source: int
    drop_transit: int
    control_by_kind: dict[str, dict[str, int]] = field(default_factory=dict)
    drops_by_node: dict[int, int] = field(default_factory=dict)
    excluded_flows: list[int] = field(default_factory=list)
    route_latency_ms: float | None = None
    discoveries: int = 0
    loop_violations: int = 0

    @property
    def grid_key(self) -> tuple:
        e = self.echo
        return (e.protocol, e.nodes, e.speed_class, e.pause_s, e.seed)

    def to_row(self) -> list[str]:
        e = self.echo
        return [
            e.protocol, str(e.nodes), e.speed_class, format_metric(float(e.pause_s)), str(e.seed),
            format_metric(self.throughput_kBps), format_metric(self.pct_delivered),
            format_metric(self.pdf), format_metric(self.avg_delay_ms),
            format_metric(self.recv_eff), format_metric(self.send_eff), format_metric(self.fwd_eff),
            str(self.ctrl_pkts), str(self.ctrl_bytes), str(self.data_sent), str(self.data_delivered),
            str(self.drop_source), str(self.drop_transit),
        ]

    def metric(self, name: str) -> float | int | None:
        return getattr(self, name)

    def to_dict(self) -> dict[str, Any]:
        out = dict(zip(CSV_HEADER, self.to_row()))
        out.update({
            "duration_s": self.echo.duration_s,
            "control_by_kind": self.control_by_kind,
            "drops_by_node": {str(k): v for k, v in sorted(self.drops_by_node.items())},
            "excluded_flows": self.excluded_flows,
            "route_latency_ms": format_metric(self.route_latency_ms),
            "discoveries": self.discoveries,
            "loop_violations": self.loop_violations,
        })
        return out


class PointStatus(str, Enum):
    """Lifecycle of one sweep point."""
    PENDING = "pending"
    RUNNING = "running"
    COMPLETED = "completed"
    FAILED = "failed"


@dataclass
class PointRun:
    """Mutable tracking state for one sweep point."""
    id: str
    key: tuple
    status: PointStatus = PointStatus.PENDING
    started_at: datetime | None = None
    completed_at: datetime | None = None
    error: str | None = None
    result: RunResult | None = None

    def set_status(self, status: PointStatus, error: str | None = None) -> None:
        self.status = status
        if status is PointStatus.RUNNING:
            self.started_at = datetime.now()
        elif status in (PointStatus.COMPLETED, PointStatus.FAILED):
            self.completed_at = datetime.now()
        if error:
            self.error = error

    def get_duration_ms(self) -> int | None:
        if self.started_at is None:
            return None
        end = self.completed_at or datetime.now()
        return int((end - self.started_at).total_seconds() * 1000)

    def to_dict(self) -> dict[str, Any]:
        return {
            "id": self.id,
            "key": list(self.key),
            "status": self.status.value,
            "startedAt": self.started_at.isoformat() if self.started_at else None,
            "completedAt": self.completed_at.isoformat() if self.completed_at else None,
            "durationMs": self.get_duration_ms(),
            "error": self.error,
        }


@dataclass
class SweepSummary:
    """Counts over all points of a sweep."""
    total: int = 0
    completed: int = 0
    failed: int = 0
    pending: int = 0

    def to_dict(self) -> dict[str, int]:
        return asdict(self)


@dataclass
class SweepOutcome:
    """What a finished sweep hands back to the caller."""
    results: list[RunResult]
    failures: list[PointRun]
    out_dir: str | None = None

    @property
    def rows(self) -> int:
        return len(self.results)
