"""
TORA routing agent.

Every node keeps one instance per destination holding its height and the
last height heard from each neighbour. Data always moves to the lowest
downstream neighbour not already on the packet's trail, and carries the
forwarder's height so a receiver that is not actually lower can turn it
away. Route creation floods QRY and answers with UPD; maintenance raises
heights through new, propagated and reflected reference levels; a
reflected level returning to its originator from every neighbour proves a
partition and is flushed with CLR.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import TYPE_CHECKING, Iterable

from .models import DataPacket, Frame, FrameKind
from .routing import RoutingAgent
from .utils.logger import get_logger

if TYPE_CHECKING:
    from .simulation import Network

logger = get_logger("tora")


@dataclass(frozen=True, order=True)
class Height:
    """Reference level ``(tau, oid, r)`` plus offset ``delta`` and node ``id``; ordered lexicographically."""
    tau: float
    oid: int
    r: int
    delta: int
    id: int

    @property
    def level(self) -> tuple[float, int, int]:
        return (self.tau, self.oid, self.r)

    def reflected(self, node: int) -> "Height":
        return Height(self.tau, self.oid, 1, 0, node)

    def __str__(self) -> str:
        return f"{self.tau!r},{self.oid},{self.r},{self.delta},{self.id}"


def zero(dest: int) -> Height:
    return Height(0.0, 0, 0, 0, dest)


class Ordering(Enum):
    LESS = -1
    EQUAL = 0
    GREATER = 1


def compare(a: Height | None, b: Height | None) -> Ordering:
    """Total order on heights; NULL (None) is above every real height."""
    if a is None or b is None:
        if a is None and b is None:
            return Ordering.EQUAL
        return Ordering.GREATER if a is None else Ordering.LESS
    if a == b:
        return Ordering.EQUAL
    return Ordering.LESS if a < b else Ordering.GREATER


class Direction(str, Enum):
    DOWNSTREAM = "down"
    UPSTREAM = "up"
    UNDIRECTED = "undirected"


@dataclass(frozen=True)
class QryBody:
    dest: int
    origin: int
    epoch: int


@dataclass(frozen=True)
class UpdBody:
    dest: int
    height: Height | None


@dataclass(frozen=True)
class ClrBody:
    dest: int
    tau: float
    oid: int


@dataclass(frozen=True)
class DataBody:
    """A data packet plus the forwarder's height when it was sent."""
    packet: DataPacket
    height: Height | None = None


@dataclass
class ToraInstance:
    """Routing state of one node towards one destination."""
    dest: int
    owner: int
    height: Height | None = None
    neighbors: dict[int, Height | None] = field(default_factory=dict)
    route_required: bool = False
    epoch: int = 0
    answered: set[tuple[int, int]] = field(default_factory=set)
    cleared: set[tuple[float, int]] = field(default_factory=set)

    def direction(self, neighbor: int) -> Direction:
        theirs = self.neighbors.get(neighbor)
        if self.height is None or theirs is None:
            return Direction.UNDIRECTED
        return Direction.DOWNSTREAM if theirs < self.height else Direction.UPSTREAM

    def downstream(self) -> list[int]:
        return sorted(n for n in self.neighbors if self.direction(n) is Direction.DOWNSTREAM)

    def next_hop(self, exclude: Iterable[int] = ()) -> int | None:
        """Lowest downstream neighbour not in ``exclude``."""
        skip = set(exclude)
        down = [n for n in self.downstream() if n not in skip]
        if not down:
            return None
        return min(down, key=lambda n: self.neighbors[n])

    @property
    def reflections(self) -> set[int]:
        """Neighbours that returned this node's own level reflected."""
        h = self.height
        if h is None or h.oid != self.owner:
            return set()
        return {
            n for n, theirs in self.neighbors.items()
            if theirs is not None and (theirs.tau, theirs.oid, theirs.r) == (h.tau, h.oid, 1)
        }


class ToraAgent(RoutingAgent):
    """One node running TORA for every destination it has seen."""

    protocol = "tora"

    def __init__(self, node_id: int, net: "Network"):
        super().__init__(node_id, net)
        self.instances: dict[int, ToraInstance] = {}

    def instance(self, dest: int) -> ToraInstance:
        inst = self.instances.get(dest)
        if inst is None:
            inst = ToraInstance(dest, self.id, neighbors={n: None for n in sorted(self.neighbors)})
            if dest == self.id:
                inst.height = zero(dest)
            self.instances[dest] = inst
        return inst

    def height(self, dest: int) -> Height | None:
        return self.instance(dest).height

    def next_hop(self, dest: int) -> int | None:
        return self.instance(dest).next_hop()

    # -- state changes -------------------------------------------------

    def _set_height(self, inst: ToraInstance, height: Height | None, why: str) -> None:
        inst.height = height
        self.trace(
            "height", dest=inst.dest, h="NULL" if height is None else str(height),
            why=why, down=inst.downstream(),
        )

    def _send_upd(self, inst: ToraInstance) -> None:
        self.broadcast(FrameKind.UPD, self.frames.upd, UpdBody(inst.dest, inst.height))

    def _new_level(self, inst: ToraInstance) -> None:
        self._set_height(inst, Height(self.now, self.id, 0, 0, self.id), "generate")
        self._send_upd(inst)

    def _clear(self, inst: ToraInstance, tau: float, oid: int, why: str) -> None:
        inst.cleared.add((tau, oid))
        inst.neighbors = {n: None for n in inst.neighbors}
        self._set_height(inst, None, why)
        self.broadcast(FrameKind.CLR, self.frames.clr, ClrBody(inst.dest, tau, oid))

    # -- route creation ------------------------------------------------

    def originate_query(self, dest: int) -> bool:
        """Start route creation towards ``dest``; False when a route or a query already exists."""
        inst = self.instance(dest)
        if dest == self.id or inst.height is not None or inst.route_required:
            return False
        inst.route_required = True
        inst.epoch += 1
        self.net.ledger.discovery_started(self.now, self.id, dest)
        self.broadcast(FrameKind.QRY, self.frames.qry, QryBody(dest, self.id, inst.epoch))
        return True

    def handle_qry(self, sender: int, body: QryBody) -> None:
        inst = self.instance(body.dest)
        if inst.height is not None:
            key = (body.origin, body.epoch)
            if key in inst.answered:
                return
            inst.answered.add(key)
            self._send_upd(inst)
            return
        if inst.route_required:
            return
        inst.route_required = True
        self.broadcast(FrameKind.QRY, self.frames.qry, body)

    def handle_upd(self, sender: int, body: UpdBody) -> None:
        inst = self.instance(body.dest)
        theirs = body.height
        inst.neighbors[sender] = theirs
        if inst.dest == self.id:
            return
        if inst.height is None:
            if inst.route_required and theirs is not None:
                inst.route_required = False
                self._set_height(inst, Height(theirs.tau, theirs.oid, theirs.r, theirs.delta + 1, self.id), "create")
                self._send_upd(inst)
                self.net.ledger.discovery_completed(self.now, self.id, inst.dest)
                self._flush(inst)
            return
        if inst.downstream():
            return
        self.propagate_reference(inst)

    # -- route maintenance ---------------------------------------------

    def propagate_reference(self, inst: ToraInstance) -> None:
        """React to losing the last downstream link through a neighbour's height change."""
        known = {n: h for n, h in inst.neighbors.items() if h is not None}
        if not known:
            self._set_height(inst, None, "orphaned")
            return
        levels = {h.level for h in known.values()}
        if len(levels) > 1:
            top = max(levels)
            delta = min(h.delta for h in known.values() if h.level == top) - 1
            self._set_height(inst, Height(*top, delta, self.id), "propagate")
            self._send_upd(inst)
            return
        tau, oid, r = levels.pop()
        if r == 0:
            self._set_height(inst, Height(tau, oid, 1, 0, self.id), "reflect")
            self._send_upd(inst)
        elif oid == self.id:
            self.detect_partition(inst)
        else:
            self._new_level(inst)

    def detect_partition(self, inst: ToraInstance) -> bool:
        """Originator of the current level: every neighbour reflected it back, so flush with CLR."""
        h = inst.height
        if h is None or h.oid != self.id:
            return False
        known = [n for n, theirs in inst.neighbors.items() if theirs is not None]
        if not known:
            self._set_height(inst, None, "isolated")
            return True
        if inst.reflections != set(known):
            return False
        logger.debug(f"node {self.id} detected partition from {inst.dest}", extra={"tau": h.tau})
        self.trace("partition", dest=inst.dest, tau=h.tau)
        self._clear(inst, h.tau, h.oid, "partition")
        return True

    def handle_clr(self, sender: int, body: ClrBody) -> None:
        inst = self.instance(body.dest)
        if inst.dest == self.id:
            inst.neighbors[sender] = None
            return
        key = (body.tau, body.oid)
        h = inst.height
        if key not in inst.cleared and h is not None and (h.tau, h.oid) == key:
            self._clear(inst, body.tau, body.oid, "clear")
            return
        had_route = bool(inst.downstream())
        inst.neighbors[sender] = None
        if inst.height is not None and had_route and not inst.downstream():
            self._new_level(inst)

    def on_link_failure(self, neighbor: int) -> None:
        for dest in sorted(self.instances):
            inst = self.instances[dest]
            inst.neighbors.pop(neighbor, None)
            if dest == self.id or inst.height is None or inst.downstream():
                continue
            if not inst.neighbors:
                self._set_height(inst, None, "isolated")
                continue
            if inst.height.oid == self.id and self.detect_partition(inst):
                continue
            self._new_level(inst)

    # -- links ---------------------------------------------------------

    def link_up(self, neighbor: int) -> None:
        self.neighbors.add(neighbor)
        for dest in sorted(self.instances):
            inst = self.instances[dest]
            inst.neighbors[neighbor] = None
            if inst.height is not None:
                self._send_upd(inst)
            elif inst.route_required:
                inst.epoch += 1
                self.broadcast(FrameKind.QRY, self.frames.qry, QryBody(dest, self.id, inst.epoch))

    def link_down(self, neighbor: int) -> None:
        if neighbor not in self.neighbors:
            return
        self.neighbors.discard(neighbor)
        self.on_link_failure(neighbor)

    # -- data ----------------------------------------------------------

    def send_data(self, packet: DataPacket) -> None:
        self.route(packet)

    def route(self, packet: DataPacket) -> None:
        if packet.dest == self.id:
            self.deliver(packet)
            return
        inst = self.instance(packet.dest)
        hop = inst.next_hop(exclude=packet.trail)
        if hop is not None:
            self._forward(inst, packet, hop)
        elif inst.route_required:
            self.enqueue(packet)
        elif packet.source == self.id and inst.height is None:
            self.originate_query(packet.dest)
            self.enqueue(packet)
        else:
            self.drop(packet, "no_downstream")

    def _forward(self, inst: ToraInstance, packet: DataPacket, hop: int) -> None:
        packet.trail.append(self.id)
        size = self.frames.data_frame(packet.payload_bytes)
        self.unicast(FrameKind.DATA, hop, size, DataBody(packet, inst.height), uid=packet.uid)

    def _flush(self, inst: ToraInstance) -> None:
        for packet in self.buffer.pop_all(inst.dest):
            self.route(packet)

    def _receive_data(self, frame: Frame) -> None:
        body: DataBody = frame.payload
        packet = body.packet
        if self.id in packet.trail:
            logger.warning(f"packet {packet.uid} revisited node {self.id}")
            self.net.ledger.loop_violation(self.now, self.id, packet.uid)
            self.drop(packet, "revisit")
            return
        if packet.dest != self.id:
            mine = self.instance(packet.dest).height
            if compare(mine, body.height) is not Ordering.LESS:
                # the sender's view of us is stale; accepting would move the packet uphill
                self.trace("refuse", uid=packet.uid, sender=frame.sender,
                           h="NULL" if mine is None else str(mine))
                self.net.refuse_data(self.id, frame, mine)
                return
        self.route(packet)

    def data_refused(self, frame: Frame, height: Height | None) -> None:
        """``frame.dst`` turned the packet away; adopt the height it reported and route again."""
        packet = frame.payload.packet
        if packet.trail and packet.trail[-1] == self.id:
            packet.trail.pop()
        if frame.dst in self.neighbors:
            self.handle_upd(frame.dst, UpdBody(packet.dest, height))
        self.route(packet)

    def receive(self, frame: Frame) -> None:
        body = frame.payload
        if frame.kind is FrameKind.DATA:
            self._receive_data(frame)
        elif frame.kind is FrameKind.QRY:
            self.handle_qry(frame.sender, body)
        elif frame.kind is FrameKind.UPD:
            self.handle_upd(frame.sender, body)
        elif frame.kind is FrameKind.CLR:
            self.handle_clr(frame.sender, body)

    def unicast_failed(self, frame: Frame) -> None:
        if frame.kind is not FrameKind.DATA:
            return
        packet = frame.payload.packet
        if frame.dst in self.neighbors:
            self.link_down(frame.dst)
        if packet.trail and packet.trail[-1] == self.id:
            packet.trail.pop()
        self.route(packet)
