"""
Constant-bit-rate traffic sources.
"""

from __future__ import annotations

from dataclasses import dataclass
from itertools import count
from typing import TYPE_CHECKING, Callable

import numpy as np

from .config import Scenario
from .models import DataPacket, FlowEcho
from .utils.logger import get_logger

if TYPE_CHECKING:
    from .simulation import Network

logger = get_logger("traffic")

TRAFFIC_STREAM = "traffic"


@dataclass(frozen=True)
class Flow:
    """One CBR flow: fixed-size packets every ``interval_s`` over ``[start_s, stop_s)``."""
    id: int
    source: int
    sink: int
    payload_bytes: int
    interval_s: float
    start_s: float
    stop_s: float

    def __post_init__(self):
        if self.interval_s <= 0:
            raise ValueError(f"flow {self.id}: interval must be > 0, got {self.interval_s}")
        if not self.start_s < self.stop_s:
            raise ValueError(f"flow {self.id}: start {self.start_s} must precede stop {self.stop_s}")
        if self.source == self.sink:
            raise ValueError(f"flow {self.id}: source and sink are both node {self.source}")

    def tick_time(self, k: int) -> float:
        return self.start_s + k * self.interval_s

    @property
    def echo(self) -> FlowEcho:
        return FlowEcho(self.id, self.source, self.sink)


def _random_pairs(rng: np.random.Generator, nodes: int, flows: int) -> list[tuple[int, int]]:
    if flows > nodes * (nodes - 1):
        raise ValueError(f"cannot draw {flows} distinct flows among {nodes} nodes")
    pairs: list[tuple[int, int]] = []
    while len(pairs) < flows:
        src, dst = (int(v) for v in rng.choice(nodes, size=2, replace=False))
        if (src, dst) not in pairs:
            pairs.append((src, dst))
    return pairs


def build_flows(scenario: Scenario, rng: np.random.Generator) -> list[Flow]:
    """
    Expand the scenario's flow settings.

    Explicit ``flow_src``/``flow_dst`` lists win; a single flow defaults to
    node 1 sending to node 0; otherwise distinct source/sink pairs are drawn
    from the traffic stream.
    """
    if scenario.flows == 0:
        return []
    if scenario.flow_src is not None:
        pairs = list(zip(scenario.flow_src, scenario.flow_dst))
    elif scenario.flows == 1:
        pairs = [(1, 0)]
    else:
        pairs = _random_pairs(rng, scenario.nodes, scenario.flows)
    return [
        Flow(i, src, dst, scenario.cbr_payload_bytes, scenario.cbr_interval_s,
             scenario.flow_start_s, scenario.flow_stop)
        for i, (src, dst) in enumerate(pairs)
    ]


class CbrSource:
    """Drives one flow: every tick opens a packet record and hands the packet to the source agent."""

    def __init__(self, flow: Flow, net: "Network", uids: Callable[[], int] | None = None):
        self.flow = flow
        self.net = net
        self._uids = uids or count(1).__next__
        self.sent = 0

    def start(self) -> None:
        self.net.sim.schedule(self.flow.tick_time(0), self.cbr_tick, 0, kind="cbr", target=self.flow.source)

    def cbr_tick(self, k: int) -> DataPacket | None:
        flow = self.flow
        t = self.net.sim.now
        if t >= flow.stop_s:
            return None
        uid = self._uids()
        self.net.ledger.open_packet(t, uid, flow.id, flow.source, flow.sink, flow.payload_bytes)
        packet = DataPacket(uid, flow.id, flow.source, flow.sink, flow.payload_bytes, t)
        self.sent += 1
        self.net.agents[flow.source].send_data(packet)
        nxt = flow.tick_time(k + 1)
        if nxt < flow.stop_s:
            self.net.sim.schedule(nxt, self.cbr_tick, k + 1, kind="cbr", target=flow.source)
        return packet
