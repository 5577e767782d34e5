"""
Configuration management for the MANET simulator.

Implements fail-fast validation: every dataclass checks its invariants in
``__post_init__`` and raises on the first violation.
"""

from dataclasses import dataclass, field, fields, replace
from enum import Enum
from pathlib import Path


class ScenarioError(ValueError):
    """A scenario value violates an invariant. Carries the key and, once known, the line."""

    def __init__(self, key: str, message: str, line: int | None = None):
        self.key = key
        self.line = line
        self.reason = message
        super().__init__(self._render())

    def _render(self) -> str:
        where = f" at line {self.line}" if self.line is not None else ""
        return f"{self.reason} ('{self.key}'{where})" if self.key else self.reason

    def at_line(self, line: int) -> "ScenarioError":
        return ScenarioError(self.key, self.reason, line)


class UnknownKeyError(ScenarioError):
    """A scenario file names a key the simulator does not accept."""

    def __init__(self, key: str, line: int | None = None):
        super().__init__(key, "unknown key", line)

    def _render(self) -> str:
        where = f" at line {self.line}" if self.line is not None else ""
        return f"unknown key '{self.key}'{where}"

    def at_line(self, line: int) -> "UnknownKeyError":
        return UnknownKeyError(self.key, line)


class Protocol(str, Enum):
    """Routing protocol driven by a scenario."""
    TORA = "tora"
    PDSR = "pdsr"
    DSR = "dsr"


class SpeedClass(str, Enum):
    """Named speed ranges."""
    SLOW = "slow"
    FAST = "fast"
    CUSTOM = "custom"
    STATIC = "static"


class MobilityModel(str, Enum):
    """How node positions evolve."""
    RANDOM_WAYPOINT = "random_waypoint"
    STATIC = "static"


SPEED_RANGES: dict[SpeedClass, tuple[float, float]] = {
    SpeedClass.SLOW: (1.0, 5.0),
    SpeedClass.FAST: (10.0, 20.0),
}

DEFAULT_PAUSE_SWEEP: tuple[float, ...] = (0.0, 25.0, 50.0, 100.0, 150.0, 200.0)


@dataclass(frozen=True)
class FrameSizes:
    """Byte sizes of every frame kind. Defaults double as the header floors."""
    data: int = 12
    hop: int = 4
    rreq: int = 24
    rrep: int = 24
    rerr: int = 20
    warning: int = 20
    ack: int = 14
    qry: int = 20
    upd: int = 28
    clr: int = 24

    def __post_init__(self):
        floors = FrameSizes.__dataclass_fields__
        for f in fields(self):
            value = getattr(self, f.name)
            floor = floors[f.name].default
            if value < floor:
                raise ScenarioError(
                    f"frame_{f.name}",
                    f"frame size for {f.name} must be >= {floor} bytes, got {value}",
                )

    def data_frame(self, payload: int, route_hops: int = 0) -> int:
        """Size of a data frame carrying ``payload`` bytes and a source route of ``route_hops`` hops."""
        return self.data + payload + self.hop * route_hops

    def rreq_frame(self, recorded: int) -> int:
        return self.rreq + self.hop * recorded

    def rrep_frame(self, *route_hops: int) -> int:
        return self.rrep + self.hop * sum(route_hops)


@dataclass(frozen=True)
class Scenario:
    """
    A fully validated simulation scenario.

    Defaults follow the reference setup: 500 x 500 m field, 250 m range,
    2 Mbps, 200 s, one CBR flow from node 1 to node 0 at 4 packets/s.
    """
    protocol: Protocol = Protocol.TORA
    nodes: int = 10
    area_x: float = 500.0
    area_y: float = 500.0
    range_m: float = 250.0
    bandwidth_bps: float = 2_000_000.0
    duration_s: float = 200.0
    seed: int = 1

    # Mobility
    mobility: MobilityModel = MobilityModel.RANDOM_WAYPOINT
    speed_min: float = 1.0
    speed_max: float = 5.0
    pause_s: float = 0.0
    positions: tuple[tuple[float, float], ...] | None = None

    # Traffic
    flows: int = 1
    flow_src: tuple[int, ...] | None = None
    flow_dst: tuple[int, ...] | None = None
    flow_start_s: float = 0.0
    flow_stop_s: float | None = None
    cbr_payload_bytes: int = 512
    cbr_interval_s: float = 0.25

    # Protocol parameters
    pdsr_q_s: float = 0.1
    pdsr_threshold: float = 1.5
    ack_timeout_factor: float = 3.0
    buffer_packets: int = 64
    monitor_sample_s: float = 0.2
    monitor_idle_s: float = 1.0
    rreq_backoff_s: float = 0.5
    rreq_backoff_cap_s: float = 8.0
    rreq_max_tries: int = 10

    frames: FrameSizes = field(default_factory=FrameSizes)

    def __post_init__(self):
        """Validate after initialization."""
        object.__setattr__(self, "protocol", Protocol(self.protocol))
        object.__setattr__(self, "mobility", MobilityModel(self.mobility))

        if self.nodes < 1:
            raise ScenarioError("nodes", f"nodes must be >= 1, got {self.nodes}")
        if self.area_x <= 0:
            raise ScenarioError("area_x", f"area_x must be > 0, got {self.area_x}")
        if self.area_y <= 0:
            raise ScenarioError("area_y", f"area_y must be > 0, got {self.area_y}")
        if self.range_m <= 0:
            raise ScenarioError("range_m", f"range_m must be > 0, got {self.range_m}")
        if self.bandwidth_bps <= 0:
            raise ScenarioError("bandwidth_bps", f"bandwidth_bps must be > 0, got {self.bandwidth_bps}")
        if self.duration_s <= 0:
            raise ScenarioError("duration_s", f"duration_s must be > 0, got {self.duration_s}")
        if self.seed < 0:
            raise ScenarioError("seed", f"seed must be >= 0, got {self.seed}")

        if self.mobility is MobilityModel.RANDOM_WAYPOINT:
            if self.speed_min <= 0:
                raise ScenarioError("speed_min", f"speed_min must be > 0, got {self.speed_min}")
            if self.speed_max < self.speed_min:
                raise ScenarioError(
                    "speed_max",
                    f"speed_max must be >= speed_min ({self.speed_min}), got {self.speed_max}",
                )
        if self.pause_s < 0:
            raise ScenarioError("pause_s", f"pause_s must be >= 0, got {self.pause_s}")

        if self.positions is not None:
            if len(self.positions) != self.nodes:
                raise ScenarioError(
                    "positions",
                    f"positions lists {len(self.positions)} nodes, expected {self.nodes}",
                )
            for x, y in self.positions:
                if not (0 <= x <= self.area_x and 0 <= y <= self.area_y):
                    raise ScenarioError("positions", f"position ({x}, {y}) lies outside the field")
        elif self.mobility is MobilityModel.STATIC:
            raise ScenarioError("positions", "static mobility requires explicit positions")

        self._validate_flows()

        if self.cbr_payload_bytes < 1:
            raise ScenarioError("cbr_payload_bytes", f"cbr_payload_bytes must be >= 1, got {self.cbr_payload_bytes}")
        if self.cbr_interval_s <= 0:
            raise ScenarioError("cbr_interval_s", f"cbr_interval_s must be > 0, got {self.cbr_interval_s}")
        if self.pdsr_q_s < 0:
            raise ScenarioError("pdsr_q_s", f"pdsr_q_s must be >= 0, got {self.pdsr_q_s}")
        if self.pdsr_threshold <= 0:
            raise ScenarioError("pdsr_T", f"pdsr_T must be > 0, got {self.pdsr_threshold}")
        if self.ack_timeout_factor <= 0:
            raise ScenarioError("ack_timeout_factor", f"ack_timeout_factor must be > 0, got {self.ack_timeout_factor}")
        if self.buffer_packets < 1:
            raise ScenarioError("buffer_packets", f"buffer_packets must be >= 1, got {self.buffer_packets}")
        if self.monitor_sample_s <= 0:
            raise ScenarioError("monitor_sample_s", f"monitor_sample_s must be > 0, got {self.monitor_sample_s}")
        if self.monitor_idle_s <= 0:
            raise ScenarioError("monitor_idle_s", f"monitor_idle_s must be > 0, got {self.monitor_idle_s}")
        if self.rreq_backoff_s <= 0:
            raise ScenarioError("rreq_backoff_s", f"rreq_backoff_s must be > 0, got {self.rreq_backoff_s}")
        if self.rreq_backoff_cap_s < self.rreq_backoff_s:
            raise ScenarioError("rreq_backoff_cap_s", "rreq_backoff_cap_s must be >= rreq_backoff_s")
        if self.rreq_max_tries < 1:
            raise ScenarioError("rreq_max_tries", f"rreq_max_tries must be >= 1, got {self.rreq_max_tries}")

    def _validate_flows(self) -> None:
        if self.flows < 0:
            raise ScenarioError("flows", f"flows must be >= 0, got {self.flows}")
        for key, ids in (("flow_src", self.flow_src), ("flow_dst", self.flow_dst)):
            if ids is None:
                continue
            if len(ids) != self.flows:
                raise ScenarioError(key, f"{key} lists {len(ids)} nodes, expected {self.flows}")
            for node in ids:
                if not 0 <= node < self.nodes:
                    raise ScenarioError(key, f"node id {node} is not below node count {self.nodes}")
        if (self.flow_src is None) != (self.flow_dst is None):
            raise ScenarioError("flow_dst", "flow_src and flow_dst must be given together")
        if self.flow_src is not None:
            for src, dst in zip(self.flow_src, self.flow_dst):
                if src == dst:
                    raise ScenarioError("flow_dst", f"flow from node {src} to itself")
        elif self.flows > 0 and self.nodes < 2:
            raise ScenarioError("flows", "flows need at least 2 nodes")
        if self.flow_start_s < 0:
            raise ScenarioError("flow_start_s", f"flow_start_s must be >= 0, got {self.flow_start_s}")
        stop = self.flow_stop
        if not self.flow_start_s < stop <= self.duration_s:
            raise ScenarioError(
                "flow_stop_s",
                f"flow window must satisfy start < stop <= duration, got [{self.flow_start_s}, {stop}]",
            )

    @property
    def flow_stop(self) -> float:
        return self.duration_s if self.flow_stop_s is None else self.flow_stop_s

    @property
    def speed_range(self) -> tuple[float, float]:
        return (self.speed_min, self.speed_max)

    @property
    def speed_class(self) -> SpeedClass:
        """Name of the speed range, as reported in result rows."""
        if self.mobility is MobilityModel.STATIC:
            return SpeedClass.STATIC
        for name, bounds in SPEED_RANGES.items():
            if bounds == self.speed_range:
                return name
        return SpeedClass.CUSTOM

    def with_overrides(self, **changes) -> "Scenario":
        """Return a copy with fields replaced and re-validated."""
        return replace(self, **changes)


@dataclass
class SweepGrid:
    """Axes of a parameter sweep. Every axis must be non-empty."""
    nodes: list[int]
    speeds: list[SpeedClass]
    pauses: list[float]
    seeds: list[int]
    protocols: list[Protocol] = field(default_factory=lambda: [Protocol.TORA, Protocol.PDSR])

    def __post_init__(self):
        if not self.seeds:
            raise ValueError("seed list must not be empty")
        for name in ("nodes", "speeds", "pauses", "protocols"):
            if not getattr(self, name):
                raise ValueError(f"{name} list must not be empty")
        self.speeds = [SpeedClass(s) for s in self.speeds]
        self.protocols = [Protocol(p) for p in self.protocols]
        for speed in self.speeds:
            if speed not in SPEED_RANGES:
                raise ValueError(f"sweep speed must be one of slow, fast; got {speed.value}")

    def __len__(self) -> int:
        return len(self.nodes) * len(self.speeds) * len(self.pauses) * len(self.seeds) * len(self.protocols)

    def keys(self) -> list[tuple[str, int, str, float, int]]:
        """Grid keys ``(protocol, nodes, speed_class, pause_s, seed)`` in grid order."""
        return [
            (protocol.value, nodes, speed.value, float(pause), seed)
            for protocol in self.protocols
            for nodes in self.nodes
            for speed in self.speeds
            for pause in self.pauses
            for seed in self.seeds
        ]

    def scenario(self, base: Scenario, key: tuple[str, int, str, float, int]) -> Scenario:
        """The scenario of one grid point; raises ScenarioError when the point is invalid."""
        protocol, nodes, speed, pause, seed = key
        lo, hi = SPEED_RANGES[SpeedClass(speed)]
        return base.with_overrides(
            protocol=Protocol(protocol), nodes=nodes, speed_min=lo, speed_max=hi,
            pause_s=pause, seed=seed, positions=None,
            mobility=MobilityModel.RANDOM_WAYPOINT,
        )

    def points(self, base: Scenario) -> list[Scenario]:
        """Expand the grid over ``base``, in grid-key order."""
        return [self.scenario(base, key) for key in self.keys()]


@dataclass
class ProcessorConfig:
    """
    Settings for running scenarios through the stage pipeline.

    Implements fail-fast validation - raises on invalid configuration.
    """
    out_dir: Path | None = None
    batch_size: int = 4
    write_traces: bool = False
    verbose: bool = False

    def __post_init__(self):
        if self.out_dir is not None:
            self.out_dir = Path(self.out_dir)
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {self.batch_size}")

    def ensure_directories(self) -> None:
        """Ensure the output directory exists."""
        if self.out_dir is not None:
            self.out_dir.mkdir(parents=True, exist_ok=True)
