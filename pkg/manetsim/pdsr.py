"""
DSR and Preemptive DSR routing agents.

Both share route discovery, source-routed forwarding, the route cache,
salvaging and RERR handling. The preemptive variant makes the destination
collect requests for a short window and answer with a primary and a
backup route, monitors signal strength on every hop carrying data, and
moves a flow to its backup before the primary breaks.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import TYPE_CHECKING, Iterable, Sequence

from .engine import EventHandle
from .models import DataPacket, Frame, FrameKind
from .routing import RoutingAgent
from .utils.logger import get_logger

if TYPE_CHECKING:
    from .simulation import Network

logger = get_logger("pdsr")

Route = tuple[int, ...]

ACK_TIMEOUT_FLOOR_S = 0.05
# a warned hop re-arms only once the strength clears the threshold by this factor
REARM_MARGIN = 1.05


def uses_link(route: Sequence[int], a: int, b: int) -> bool:
    return any({x, y} == {a, b} for x, y in zip(route, route[1:]))


def select_routes(candidates: Iterable[Sequence[int]]) -> tuple[Route, Route | None]:
    """
    Pick the primary and backup from collected route records.

    Primary is the fewest-hop record (ties lexicographic). Backup shares the
    fewest intermediate nodes with the primary, then has fewest hops, then
    is lexicographically smallest.
    """
    ordered = sorted({tuple(c) for c in candidates}, key=lambda r: (len(r), r))
    if not ordered:
        raise ValueError("no candidate routes")
    primary = ordered[0]
    inner = set(primary[1:-1])
    rest = [r for r in ordered[1:] if r[1:-1] != primary[1:-1]]
    if not rest:
        return primary, None
    backup = min(rest, key=lambda r: (len(inner.intersection(r[1:-1])), len(r), r))
    return primary, backup


class RouteMode(str, Enum):
    PRIMARY_ONLY = "primary"
    BOTH = "both"
    BACKUP_ONLY = "backup"


@dataclass
class DualRoute:
    primary: Route
    backup: Route | None = None
    active: RouteMode = RouteMode.PRIMARY_ONLY

    def __post_init__(self):
        if self.backup is not None and self.backup[1:-1] == self.primary[1:-1]:
            raise ValueError("backup route must differ from the primary in an intermediate node")

    def data_routes(self) -> list[Route]:
        if self.active is RouteMode.BOTH and self.backup is not None:
            return [self.primary, self.backup]
        return [self.primary]


class RouteCache:
    """Known routes per destination, each starting at the owning node."""

    def __init__(self, owner: int):
        self.owner = owner
        self._routes: dict[int, dict[Route, float]] = {}

    def add(self, route: Sequence[int], t: float) -> None:
        route = tuple(route)
        if len(route) < 2 or route[0] != self.owner or len(set(route)) != len(route):
            return
        for end in range(2, len(route) + 1):
            prefix = route[:end]
            self._routes.setdefault(prefix[-1], {}).setdefault(prefix, t)

    def routes(self, dest: int) -> list[Route]:
        return sorted(self._routes.get(dest, {}), key=lambda r: (len(r), r))

    def find(self, dest: int, avoid: Iterable[int] = ()) -> Route | None:
        """Shortest cached route to ``dest`` that does not pass through any node in ``avoid``."""
        blocked = set(avoid)
        for route in self.routes(dest):
            if not blocked.intersection(route[1:]):
                return route
        return None

    def remove_link(self, a: int, b: int) -> int:
        removed = 0
        for dest in list(self._routes):
            table = self._routes[dest]
            for route in [r for r in table if uses_link(r, a, b)]:
                del table[route]
                removed += 1
            if not table:
                del self._routes[dest]
        return removed

    def __len__(self) -> int:
        return sum(len(t) for t in self._routes.values())

    def __contains__(self, route: Sequence[int]) -> bool:
        route = tuple(route)
        return bool(route) and route in self._routes.get(route[-1], {})


@dataclass(frozen=True)
class RreqBody:
    source: int
    target: int
    rid: int
    record: Route


@dataclass(frozen=True)
class RrepBody:
    source: int
    target: int
    primary: Route
    backup: Route | None


@dataclass(frozen=True)
class RerrBody:
    source: int
    a: int
    b: int
    route: Route


@dataclass(frozen=True)
class WarningBody:
    source: int
    dest: int
    route: Route
    monitor: int


@dataclass(frozen=True)
class AckBody:
    source: int
    dest: int
    uid: int
    route: Route


@dataclass(frozen=True)
class DataBody:
    packet: DataPacket


@dataclass
class Discovery:
    dest: int
    started: float
    tries: int = 0
    rid: int = 0
    timer: EventHandle | None = None


@dataclass
class CollectionWindow:
    source: int
    rid: int
    deadline: float
    records: list[Route] = field(default_factory=list)


@dataclass
class AckWait:
    route: Route
    uid: int | None = None
    timer: EventHandle | None = None


@dataclass
class HopMonitor:
    """Signal watch on one route hop; warns once per crossing below the threshold."""
    neighbor: int
    route: Route
    armed: bool = True
    last_seen: float = 0.0
    sampler: EventHandle | None = None

    def check(self, strength: float, threshold: float) -> bool:
        """Feed one strength sample; True when it should raise a warning."""
        if self.armed and strength < threshold:
            self.armed = False
            return True
        if not self.armed and strength >= threshold * REARM_MARGIN:
            self.armed = True
        return False


class PdsrAgent(RoutingAgent):
    """Source-routing agent; ``preemptive`` switches between PDSR and plain DSR behaviour."""

    protocol = "pdsr"
    preemptive = True

    def __init__(self, node_id: int, net: "Network"):
        super().__init__(node_id, net)
        self.cache = RouteCache(node_id)
        self.routes: dict[int, DualRoute] = {}
        self.discoveries: dict[int, Discovery] = {}
        self.windows: dict[tuple[int, int], CollectionWindow] = {}
        self.replied: set[tuple[int, int]] = set()
        self.seen: set[tuple[int, int]] = set()
        self.ack_waits: dict[int, AckWait] = {}
        self.monitors: dict[tuple[int, Route], HopMonitor] = {}
        self.warnings_sent = 0
        self.switches = 0
        self._rid = 0

    @property
    def scenario(self):
        return self.net.scenario

    # -- route discovery -----------------------------------------------

    def known_route(self, dest: int, avoid: Iterable[int] = ()) -> Route | None:
        """The direct hop when ``dest`` is a neighbour, else the shortest cached route avoiding ``avoid``."""
        if dest in self.neighbors and dest not in avoid:
            return (self.id, dest)
        return self.cache.find(dest, avoid)

    def originate_rreq(self, dest: int, force: bool = False) -> bool:
        """
        Start a discovery; ``force`` skips the existing-route check (warnings, Ack timeouts).

        A forced discovery started while a route is held counts as ready at
        once for route-creation latency: data never waits on it.
        """
        if dest == self.id or dest in self.discoveries:
            return False
        if not force and (dest in self.routes or self.known_route(dest) is not None):
            return False
        disc = Discovery(dest, started=self.now)
        self.discoveries[dest] = disc
        self.net.ledger.discovery_started(self.now, self.id, dest)
        if dest in self.routes:
            self.net.ledger.discovery_completed(self.now, self.id, dest)
        self._send_rreq(disc)
        return True

    def _send_rreq(self, disc: Discovery) -> None:
        disc.tries += 1
        self._rid += 1
        disc.rid = self._rid
        self.seen.add((self.id, disc.rid))
        self.trace("rreq", dest=disc.dest, rid=disc.rid, tries=disc.tries)
        record = (self.id,)
        self.broadcast(FrameKind.RREQ, self.frames.rreq_frame(len(record)), RreqBody(self.id, disc.dest, disc.rid, record))
        sc = self.scenario
        wait = min(sc.rreq_backoff_s * 2 ** (disc.tries - 1), sc.rreq_backoff_cap_s)
        disc.timer = self.net.sim.schedule_in(wait, self._rreq_timeout, disc.dest, kind="rreq_retry", target=self.id)

    def _rreq_timeout(self, dest: int) -> None:
        disc = self.discoveries.get(dest)
        if disc is None:
            return
        if not self.buffer.has(dest):
            del self.discoveries[dest]
            return
        if disc.tries >= self.scenario.rreq_max_tries:
            del self.discoveries[dest]
            dropped = self.buffer.pop_all(dest)
            logger.info(
                f"node {self.id} gave up discovery of {dest} after {disc.tries} tries",
                extra={"dropped": len(dropped)},
            )
            self.trace("rreq_giveup", dest=dest, tries=disc.tries)
            for packet in dropped:
                self.drop(packet, "no_route")
            return
        self._send_rreq(disc)

    def handle_rreq(self, sender: int, body: RreqBody) -> None:
        if body.source == self.id:
            return
        if self.id == body.target:
            self._collect(body.source, body.rid, body.record + (self.id,))
            return
        key = (body.source, body.rid)
        if key in self.seen or self.id in body.record:
            return
        self.seen.add(key)
        record = body.record + (self.id,)
        self.cache.add(tuple(reversed(record)), self.now)
        self.broadcast(FrameKind.RREQ, self.frames.rreq_frame(len(record)), RreqBody(body.source, body.target, body.rid, record))

    def _collect(self, source: int, rid: int, record: Route) -> None:
        key = (source, rid)
        if key in self.replied:
            return
        self.cache.add(tuple(reversed(record)), self.now)
        window = self.windows.get(key)
        if window is None:
            window = CollectionWindow(source, rid, self.now + self.scenario.pdsr_q_s)
            self.windows[key] = window
            if self.preemptive and self.scenario.pdsr_q_s > 0:
                self.net.sim.schedule(window.deadline, self.collect_and_reply, key, kind="rreq_window", target=self.id)
            else:
                window.records.append(record)
                self.collect_and_reply(key)
                return
        window.records.append(record)

    def collect_and_reply(self, key: tuple[int, int]) -> None:
        window = self.windows.pop(key, None)
        if window is None:
            return
        self.replied.add(key)
        primary, backup = select_routes(window.records)
        if not self.preemptive:
            backup = None
        if backup is not None:
            self._forget_monitors(primary, backup)
        self.trace("collect", source=window.source, rid=window.rid, candidates=len(window.records),
                   primary=primary, backup=backup)
        hops = [len(primary) - 1] + ([len(backup) - 1] if backup else [])
        self.unicast(
            FrameKind.RREP, primary[-2], self.frames.rrep_frame(*hops),
            RrepBody(window.source, self.id, primary, backup),
        )

    def handle_rrep(self, sender: int, body: RrepBody) -> None:
        for route in (body.primary, body.backup):
            if route is not None and self.id in route:
                self._learn(route)
                if body.backup is not None:
                    # a re-issued route with a backup is watched afresh, even on hops that already warned
                    self._forget_monitors(route)
        if self.id == body.source:
            self._install(body)
            return
        if self.id not in body.primary:
            return
        idx = body.primary.index(self.id)
        self.unicast(FrameKind.RREP, body.primary[idx - 1], self.frames.rrep_frame(
            *([len(body.primary) - 1] + ([len(body.backup) - 1] if body.backup else []))
        ), body)

    def _install(self, body: RrepBody) -> None:
        dest = body.target
        disc = self.discoveries.pop(dest, None)
        if disc is not None:
            self.net.sim.cancel(disc.timer)
        self.net.ledger.discovery_completed(self.now, self.id, dest)
        self._cancel_ack_wait(dest)
        backup = body.backup if self.preemptive else None
        old = self.routes.get(dest)
        if old is not None:
            self._forget_monitors(*({old.primary, old.backup} - {body.primary, backup}))
        self.routes[dest] = DualRoute(body.primary, backup)
        self.trace("route_install", dest=dest, primary=body.primary, backup=backup)
        for packet in self.buffer.pop_all(dest):
            self.send_data(packet)

    # -- data ----------------------------------------------------------

    def send_data(self, packet: DataPacket) -> None:
        dest = packet.dest
        if dest == self.id:
            self.deliver(packet)
            return
        dual = self.routes.get(dest)
        if dual is None:
            cached = self.known_route(dest)
            if cached is not None:
                dual = self.routes[dest] = DualRoute(cached)
                self.trace("route_install", dest=dest, primary=cached, backup=None)
        if dual is None:
            self.enqueue(packet)
            self.originate_rreq(dest)
            return
        self._dispatch(packet, dual)

    def _dispatch(self, packet: DataPacket, dual: DualRoute) -> None:
        primary, *extra = dual.data_routes()
        packet.wants_ack = False
        packet.on_backup = False
        packet.route = primary
        copies = [packet]
        for backup in extra:
            copy = packet.duplicate()
            copy.route = backup
            copy.on_backup = True
            self.net.ledger.add_copy(packet.uid)
            wait = self.ack_waits.get(packet.dest)
            if wait is not None and wait.uid is None and wait.route == backup:
                copy.wants_ack = True
                wait.uid = packet.uid
                wait.timer = self.net.sim.schedule_in(
                    self._ack_timeout(backup, packet), self._ack_expired, packet.dest,
                    kind="ack_timeout", target=self.id,
                )
                self.trace("dup_backup", dest=packet.dest, uid=packet.uid)
            copies.append(copy)
        for p in copies:
            self._forward(p, p.route[1])

    def _ack_timeout(self, route: Route, packet: DataPacket) -> float:
        hops = len(route) - 1
        per_hop = self.net.medium.tx_time(self.frames.data_frame(packet.payload_bytes, hops))
        return max(ACK_TIMEOUT_FLOOR_S, self.scenario.ack_timeout_factor * hops * per_hop)

    def _forward(self, packet: DataPacket, next_hop: int) -> None:
        packet.trail.append(self.id)
        if packet.source == self.id:
            self._observe_hop(next_hop, packet.route)
        size = self.frames.data_frame(packet.payload_bytes, len(packet.route) - 1)
        self.unicast(FrameKind.DATA, next_hop, size, DataBody(packet), uid=packet.uid)

    def _receive_data(self, sender: int, packet: DataPacket) -> None:
        route = packet.route
        if self.id in route:
            idx = route.index(self.id)
            if idx > 0 and route[idx - 1] == sender:
                self._observe_hop(sender, route)
        if packet.dest == self.id:
            if packet.wants_ack:
                self._send_ack(packet)
            self._learn(route)
            self.deliver(packet)
            return
        if self.id in packet.trail or self.id not in route[:-1]:
            self.drop(packet, "revisit")
            return
        self._learn(route)
        self._forward(packet, route[route.index(self.id) + 1])

    def _learn(self, route: Route) -> None:
        """Cache both directions of a source route this node sits on; a gone next hop keeps the suffix out."""
        idx = route.index(self.id)
        if idx + 1 < len(route) and route[idx + 1] in self.neighbors:
            self.cache.add(route[idx:], self.now)
        self.cache.add(tuple(reversed(route[: idx + 1])), self.now)

    def _send_ack(self, packet: DataPacket) -> None:
        body = AckBody(packet.source, packet.dest, packet.uid, packet.route)
        self.unicast(FrameKind.ACK, packet.route[-2], self.frames.ack, body)

    # -- preemption ----------------------------------------------------

    def _observe_hop(self, neighbor: int, route: Route) -> None:
        if not self.preemptive:
            return
        key = (neighbor, route)
        mon = self.monitors.get(key)
        if mon is None:
            mon = self.monitors[key] = HopMonitor(neighbor, route)
        mon.last_seen = self.now
        self.monitor_signal(mon)
        if mon.sampler is None or not mon.sampler.pending:
            mon.sampler = self.net.sim.schedule_in(
                self.scenario.monitor_sample_s, self._sample, key, kind="monitor_sample", target=self.id,
            )

    def _sample(self, key: tuple[int, Route]) -> None:
        mon = self.monitors.get(key)
        if mon is None:
            return
        mon.sampler = None
        if self.now - mon.last_seen > self.scenario.monitor_idle_s:
            del self.monitors[key]
            return
        self.monitor_signal(mon)
        mon.sampler = self.net.sim.schedule_in(
            self.scenario.monitor_sample_s, self._sample, key, kind="monitor_sample", target=self.id,
        )

    def _forget_monitors(self, *routes: Route | None) -> None:
        gone = {r for r in routes if r is not None}
        for key in [k for k in self.monitors if k[1] in gone]:
            self.net.sim.cancel(self.monitors.pop(key).sampler)

    def monitor_signal(self, mon: HopMonitor) -> bool:
        """Sample the hop's signal strength and warn the source on a downward threshold crossing."""
        if self.net.topology.distance(self.id, mon.neighbor, self.now) == 0:
            return False
        value = self.net.medium.strength(self.id, mon.neighbor)
        if not mon.check(value, self.scenario.pdsr_threshold):
            return False
        self.warnings_sent += 1
        self.trace("warn", neighbor=mon.neighbor, strength=value, route=mon.route)
        route = mon.route
        body = WarningBody(route[0], route[-1], route, self.id)
        if route[0] == self.id:
            self.handle_warning(body)
        else:
            self.unicast(FrameKind.WARNING, route[route.index(self.id) - 1], self.frames.warning, body)
        return True

    def handle_warning(self, body: WarningBody) -> None:
        dual = self.routes.get(body.dest)
        if dual is None or dual.primary != body.route:
            self.trace("warn_stale", dest=body.dest)
            return
        if dual.active is RouteMode.BOTH:
            return
        if dual.backup is None:
            self.trace("warn_no_backup", dest=body.dest)
            self.originate_rreq(body.dest, force=True)
            return
        dual.active = RouteMode.BOTH
        self._cancel_ack_wait(body.dest)
        self.ack_waits[body.dest] = AckWait(dual.backup)
        self.trace("mode", dest=body.dest, mode=dual.active)

    def handle_ack(self, body: AckBody) -> None:
        wait = self.ack_waits.get(body.dest)
        dual = self.routes.get(body.dest)
        if wait is None or wait.uid != body.uid or dual is None or dual.backup != wait.route:
            self.trace("ack_late", dest=body.dest, uid=body.uid)
            return
        self._cancel_ack_wait(body.dest)
        self.preempt_switch(body.dest)

    def preempt_switch(self, dest: int) -> None:
        """Promote the backup to sole route; the old primary goes back to the cache."""
        dual = self.routes[dest]
        self.cache.add(dual.primary, self.now)
        self._forget_monitors(dual.primary)
        self.routes[dest] = DualRoute(dual.backup, None, RouteMode.BACKUP_ONLY)
        self.switches += 1
        self.trace("switch", dest=dest, route=dual.backup)

    def _ack_expired(self, dest: int) -> None:
        wait = self.ack_waits.pop(dest, None)
        if wait is None:
            return
        self.trace("ack_timeout", dest=dest, uid=wait.uid)
        self.originate_rreq(dest, force=True)

    def _cancel_ack_wait(self, dest: int) -> None:
        wait = self.ack_waits.pop(dest, None)
        if wait is not None:
            self.net.sim.cancel(wait.timer)

    # -- route maintenance ---------------------------------------------

    def handle_link_failure(self, next_hop: int, frame: Frame) -> None:
        purged = self.cache.remove_link(self.id, next_hop)
        self.trace("link_fail", neighbor=next_hop, purged=purged, kind=frame.kind)
        self._routes_lost_link(self.id, next_hop)
        if frame.kind is not FrameKind.DATA:
            return
        packet = frame.payload.packet
        if packet.trail and packet.trail[-1] == self.id:
            packet.trail.pop()
        if packet.source == self.id:
            self.send_data(packet)
            return
        idx = packet.route.index(self.id)
        prefix = packet.route[: idx + 1]
        if not packet.salvaged:
            alt = self.known_route(packet.dest, avoid=prefix)
            if alt is not None:
                packet.salvaged = True
                packet.route = prefix[:-1] + alt
                self.trace("salvage", uid=packet.uid, route=packet.route)
                self._forward(packet, alt[1])
                return
        self.unicast(
            FrameKind.RERR, prefix[-2], self.frames.rerr,
            RerrBody(packet.source, self.id, next_hop, prefix),
        )
        self.drop(packet, "link_broken")

    def handle_rerr(self, body: RerrBody) -> None:
        self.cache.remove_link(body.a, body.b)
        if self.id == body.source:
            self._routes_lost_link(body.a, body.b)
            return
        if self.id in body.route[1:]:
            self.unicast(FrameKind.RERR, body.route[body.route.index(self.id) - 1], self.frames.rerr, body)

    def _routes_lost_link(self, a: int, b: int) -> None:
        for dest in sorted(self.routes):
            dual = self.routes[dest]
            primary_hit = uses_link(dual.primary, a, b)
            backup_hit = dual.backup is not None and uses_link(dual.backup, a, b)
            if not primary_hit and not backup_hit:
                continue
            self._cancel_ack_wait(dest)
            if primary_hit and dual.backup is not None and not backup_hit:
                self._forget_monitors(dual.primary)
                self.routes[dest] = DualRoute(dual.backup)
                self.trace("promote", dest=dest, route=dual.backup)
            elif not primary_hit:
                self._forget_monitors(dual.backup)
                self.routes[dest] = DualRoute(dual.primary)
                self.trace("backup_lost", dest=dest)
                if dual.active is RouteMode.BOTH:
                    # the primary already warned; look for a fresh pair while it still works
                    self.originate_rreq(dest, force=True)
            else:
                self._forget_monitors(dual.primary, dual.backup)
                del self.routes[dest]
                cached = self.known_route(dest)
                if cached is not None:
                    self.routes[dest] = DualRoute(cached)
                    self.trace("route_install", dest=dest, primary=cached, backup=None)
                elif self.buffer.has(dest):
                    self.originate_rreq(dest)

    # -- dispatch ------------------------------------------------------

    def receive(self, frame: Frame) -> None:
        body = frame.payload
        kind = frame.kind
        if kind is FrameKind.DATA:
            self._receive_data(frame.sender, body.packet)
        elif kind is FrameKind.RREQ:
            self.handle_rreq(frame.sender, body)
        elif kind is FrameKind.RREP:
            self.handle_rrep(frame.sender, body)
        elif kind is FrameKind.RERR:
            self.handle_rerr(body)
        elif kind is FrameKind.WARNING:
            if self.id == body.source:
                self.handle_warning(body)
            elif self.id in body.route[1:]:
                self.unicast(FrameKind.WARNING, body.route[body.route.index(self.id) - 1], self.frames.warning, body)
        elif kind is FrameKind.ACK:
            if self.id == body.source:
                self.handle_ack(body)
            elif self.id in body.route[1:]:
                self.unicast(FrameKind.ACK, body.route[body.route.index(self.id) - 1], self.frames.ack, body)

    def unicast_failed(self, frame: Frame) -> None:
        self.handle_link_failure(frame.dst, frame)

    def link_up(self, neighbor: int) -> None:
        self.neighbors.add(neighbor)

    def link_down(self, neighbor: int) -> None:
        self.neighbors.discard(neighbor)
        if self.cache.remove_link(self.id, neighbor):
            self.trace("cache_purge", neighbor=neighbor)
        self._routes_lost_link(self.id, neighbor)


class DsrAgent(PdsrAgent):
    """Plain DSR: first request wins, a single route, no signal monitoring."""

    protocol = "dsr"
    preemptive = False
