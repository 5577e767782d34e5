"""
Common plumbing for routing agents.

An agent sits on one node, receives every frame the medium delivers to
that node, and is told about link changes by the simulation. Concrete
protocols implement the abstract hooks; frame construction, buffering and
packet accounting live here.
"""

from __future__ import annotations

from abc import ABC, abstractmethod
from collections import deque
from typing import TYPE_CHECKING, Any

from .models import DataPacket, Frame, FrameKind
from .utils.logger import get_logger

if TYPE_CHECKING:
    from .simulation import Network

logger = get_logger("routing")


class SendBuffer:
    """Per-destination FIFO of packets waiting for a route; overflow evicts the oldest."""

    def __init__(self, capacity: int):
        if capacity < 1:
            raise ValueError(f"buffer capacity must be >= 1, got {capacity}")
        self.capacity = capacity
        self._queues: dict[int, deque[DataPacket]] = {}

    def push(self, packet: DataPacket) -> DataPacket | None:
        """Queue a packet; returns the evicted packet when the queue was full."""
        queue = self._queues.setdefault(packet.dest, deque())
        evicted = queue.popleft() if len(queue) >= self.capacity else None
        queue.append(packet)
        return evicted

    def pop_all(self, dest: int) -> list[DataPacket]:
        queue = self._queues.pop(dest, None)
        return list(queue) if queue else []

    def has(self, dest: int) -> bool:
        return bool(self._queues.get(dest))

    def count(self, dest: int) -> int:
        return len(self._queues.get(dest, ()))

    def __len__(self) -> int:
        return sum(len(q) for q in self._queues.values())


class RoutingAgent(ABC):
    """Base class for the per-node protocol state machines."""

    protocol: str = ""

    def __init__(self, node_id: int, net: "Network"):
        self.id = node_id
        self.net = net
        self.neighbors: set[int] = set()
        self.buffer = SendBuffer(net.scenario.buffer_packets)

    @property
    def now(self) -> float:
        return self.net.sim.now

    @property
    def frames(self):
        return self.net.scenario.frames

    def trace(self, ev: str, **fields: Any) -> None:
        if self.net.tracer is not None:
            self.net.tracer.emit(self.now, self.id, ev, **fields)

    # -- hooks ---------------------------------------------------------

    @abstractmethod
    def send_data(self, packet: DataPacket) -> None:
        """Accept a packet from the local application."""

    @abstractmethod
    def receive(self, frame: Frame) -> None:
        """Handle a frame delivered by the medium."""

    @abstractmethod
    def link_up(self, neighbor: int) -> None:
        ...

    @abstractmethod
    def link_down(self, neighbor: int) -> None:
        ...

    @abstractmethod
    def unicast_failed(self, frame: Frame) -> None:
        """The medium could not reach the next hop of ``frame``."""

    def on_frame(self, node: int, frame: Frame) -> None:
        self.receive(frame)

    # -- transmission helpers ------------------------------------------

    def broadcast(self, kind: FrameKind, size: int, payload: Any) -> Frame:
        frame = Frame(kind, self.id, self.id, None, size, payload, self.net.next_uid())
        self.net.medium.broadcast(self.id, frame)
        return frame

    def unicast(self, kind: FrameKind, next_hop: int, size: int, payload: Any, uid: int | None = None) -> Frame:
        frame = Frame(kind, self.id, self.id, next_hop, size, payload, self.net.next_uid() if uid is None else uid)
        self.net.medium.unicast(self.id, frame)
        return frame

    # -- packet accounting ---------------------------------------------

    def deliver(self, packet: DataPacket) -> bool:
        """Hand a packet to the sink application; duplicates release their copy."""
        if self.net.ledger.mark_delivered(self.now, packet.uid, self.id):
            self.trace("deliver", uid=packet.uid, flow=packet.flow_id, hops=len(packet.trail))
            return True
        self.net.ledger.release_copy(self.now, packet.uid, self.id, "duplicate")
        return False

    def drop(self, packet: DataPacket, reason: str) -> None:
        self.net.ledger.release_copy(self.now, packet.uid, self.id, reason)

    def enqueue(self, packet: DataPacket) -> None:
        evicted = self.buffer.push(packet)
        if evicted is not None:
            self.drop(evicted, "buffer_overflow")
