"""
Broadcast wireless channel.

Connectivity is pure range: a frame reaches every node within ``range_m``
of the sender at the moment its transmission completes. Transmissions are
serialized per neighborhood and granted in FIFO order of request time.
There is no loss other than an out-of-range unicast next hop.
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass
from typing import Callable

from .engine import Simulator
from .metrics import MetricLedger
from .mobility import Position, Topology
from .models import Frame
from .utils.logger import get_logger

logger = get_logger("medium")

FrameHandler = Callable[[int, Frame], None]


def in_range(a: Position | tuple[float, float], b: Position | tuple[float, float], range_m: float) -> bool:
    """True iff the Euclidean distance is at most ``range_m`` (boundary inclusive)."""
    if range_m <= 0:
        raise ValueError(f"range must be > 0, got {range_m}")
    return math.dist(a, b) <= range_m


def strength(a: Position | tuple[float, float], b: Position | tuple[float, float], range_m: float) -> float:
    """Normalized received strength ``(range / distance)**2``; exactly 1.0 at the range boundary."""
    distance = math.dist(a, b)
    if distance == 0:
        raise ValueError("signal strength is undefined at zero distance")
    return (range_m / distance) ** 2


def tx_time(size: int, bandwidth_bps: float) -> float:
    return size * 8 / bandwidth_bps


@dataclass
class TxRequest:
    node: int
    frame: Frame
    requested_at: float
    seq: int


@dataclass
class ActiveTx:
    request: TxRequest
    ends_at: float


class Medium:
    """
    Per-neighborhood serialized channel.

    A waiting node is granted the channel when it does not conflict with any
    active transmitter nor with any node queued ahead of it. Two nodes
    conflict when they are in range of each other or share an in-range
    neighbor.
    """

    def __init__(
        self,
        sim: Simulator,
        topology: Topology,
        bandwidth_bps: float,
        ledger: MetricLedger,
    ):
        self.sim = sim
        self.topology = topology
        self.bandwidth_bps = bandwidth_bps
        self.ledger = ledger
        self.handlers: dict[int, FrameHandler] = {}
        self.on_unicast_failure: Callable[[int, Frame], None] | None = None
        self.queues: dict[int, deque[TxRequest]] = {}
        self.active: dict[int, ActiveTx] = {}
        self.grants = 0
        self._seq = 0
        self._completing = False

    def attach(self, node: int, handler: FrameHandler) -> None:
        self.handlers[node] = handler

    @property
    def range_m(self) -> float:
        return self.topology.range_m

    def tx_time(self, size: int) -> float:
        return tx_time(size, self.bandwidth_bps)

    def strength(self, a: int, b: int) -> float:
        t = self.sim.now
        return strength(self.topology.position(a, t), self.topology.position(b, t), self.range_m)

    def busy(self, node: int) -> bool:
        return node in self.active or bool(self.queues.get(node))

    # -- sending -------------------------------------------------------

    def broadcast(self, node: int, frame: Frame) -> None:
        self._enqueue(node, frame)

    def unicast(self, node: int, frame: Frame) -> None:
        if frame.dst is None:
            raise ValueError("unicast frame needs a next hop")
        self._enqueue(node, frame)

    def _enqueue(self, node: int, frame: Frame) -> None:
        self._seq += 1
        self.queues.setdefault(node, deque()).append(TxRequest(node, frame, self.sim.now, self._seq))
        if not self._completing:
            self._grant()

    # -- channel access ------------------------------------------------

    def _conflict(self, a: int, b: int, t: float) -> bool:
        topo = self.topology
        d = topo.distance(a, b, t)
        if d <= self.range_m:
            return True
        if d > 2 * self.range_m:
            return False
        return any(
            n != a and n != b and topo.in_range(a, n, t) and topo.in_range(b, n, t)
            for n in range(len(topo))
        )

    def _grant(self) -> None:
        t = self.sim.now
        waiting = sorted(
            (node for node, q in self.queues.items() if q and node not in self.active),
            key=lambda node: (self.queues[node][0].requested_at, self.queues[node][0].seq),
        )
        blocked: list[int] = []
        for node in waiting:
            if any(self._conflict(node, other, t) for other in self.active) or any(
                self._conflict(node, other, t) for other in blocked
            ):
                blocked.append(node)
                continue
            request = self.queues[node].popleft()
            ends_at = t + self.tx_time(request.frame.size)
            self.active[node] = ActiveTx(request, ends_at)
            self.grants += 1
            self.sim.schedule(ends_at, self._complete, node, kind="tx_end", target=node)

    def _complete(self, node: int) -> None:
        self._completing = True
        try:
            tx = self.active.pop(node)
            self._deliver(node, tx.request.frame)
        finally:
            self._completing = False
        self._grant()

    def _deliver(self, node: int, frame: Frame) -> None:
        t = self.sim.now
        if frame.dst is None:
            receivers = self.topology.neighbors(node, t)
            if not receivers:
                logger.debug(f"broadcast {frame.kind.value} from {node} reached nobody")
                return
        elif self.topology.in_range(node, frame.dst, t):
            receivers = [frame.dst]
        else:
            logger.debug(f"unicast {frame.kind.value} {node}->{frame.dst} failed, next hop out of range")
            if self.on_unicast_failure is not None:
                self.on_unicast_failure(node, frame)
            return

        self.ledger.record_tx(t, node, frame.kind, frame.size, frame.dst)
        for receiver in sorted(receivers):
            self.ledger.record_rx(t, receiver, frame.kind, frame.size, node, None if frame.kind.is_control else frame.uid)
            handler = self.handlers.get(receiver)
            if handler is not None:
                handler(receiver, frame)
