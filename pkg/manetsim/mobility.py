"""
Random-waypoint mobility.

Trajectories are piecewise linear, so link changes are solved exactly on
each pair of linear segments instead of being sampled on a timestep.
"""

from __future__ import annotations

import bisect
import math
from dataclasses import dataclass
from itertools import combinations
from typing import NamedTuple, Sequence

import networkx as nx
import numpy as np

from .utils.logger import get_logger

logger = get_logger("mobility")

_EPS = 1e-9


class Position(NamedTuple):
    x: float
    y: float


@dataclass(frozen=True)
class Field:
    width: float
    height: float


@dataclass(frozen=True)
class Waypoint:
    destination: Position
    speed: float
    pause: float

    def __post_init__(self):
        if self.speed <= 0:
            raise ValueError(f"waypoint speed must be > 0, got {self.speed}")
        if self.pause < 0:
            raise ValueError(f"waypoint pause must be >= 0, got {self.pause}")


@dataclass(frozen=True)
class Trajectory:
    """One leg: travel from ``start`` to the waypoint, then rest."""
    start: Position
    start_time: float
    waypoint: Waypoint

    @property
    def travel_time(self) -> float:
        return math.dist(self.start, self.waypoint.destination) / self.waypoint.speed

    @property
    def arrive_time(self) -> float:
        return self.start_time + self.travel_time

    @property
    def end_time(self) -> float:
        return self.arrive_time + self.waypoint.pause

    @property
    def velocity(self) -> tuple[float, float]:
        travel = self.travel_time
        if travel == 0:
            return (0.0, 0.0)
        dest = self.waypoint.destination
        return ((dest.x - self.start.x) / travel, (dest.y - self.start.y) / travel)


class Segment(NamedTuple):
    """Linear motion ``p(t) = (x0, y0) + (vx, vy) * (t - t0)`` on ``[t0, t1]``."""
    t0: float
    t1: float
    x0: float
    y0: float
    vx: float
    vy: float

    def at(self, t: float) -> tuple[float, float]:
        dt = t - self.t0
        return (self.x0 + self.vx * dt, self.y0 + self.vy * dt)


class LinkEvent(NamedTuple):
    time: float
    a: int
    b: int
    up: bool


def position_at(traj: Trajectory, t: float) -> Position:
    """Interpolate along the leg; clamp at the destination while resting."""
    if t < traj.start_time:
        raise ValueError(f"t={t} precedes trajectory start {traj.start_time}")
    elapsed = t - traj.start_time
    travel = traj.travel_time
    dest = traj.waypoint.destination
    if elapsed >= travel:
        return dest
    frac = elapsed / travel
    return Position(
        traj.start.x + (dest.x - traj.start.x) * frac,
        traj.start.y + (dest.y - traj.start.y) * frac,
    )


def next_waypoint(
    rng: np.random.Generator,
    field: Field,
    speed_range: tuple[float, float],
    pause: float,
) -> Waypoint:
    """Draw a destination uniformly over the field and a speed uniformly over ``speed_range``."""
    lo, hi = speed_range
    if lo <= 0:
        raise ValueError(f"minimum speed must be > 0, got {lo}")
    if hi < lo:
        raise ValueError(f"degenerate speed range: max {hi} < min {lo}")
    dest = Position(float(rng.uniform(0.0, field.width)), float(rng.uniform(0.0, field.height)))
    speed = float(rng.uniform(lo, hi))
    return Waypoint(dest, speed, pause)


class NodePath:
    """The whole movement history of one node as consecutive legs."""

    def __init__(self, legs: Sequence[Trajectory]):
        if not legs:
            raise ValueError("a node path needs at least one leg")
        self.legs = tuple(legs)
        self._starts = [leg.start_time for leg in self.legs]

    @classmethod
    def stationary(cls, where: Position | tuple[float, float]) -> "NodePath":
        pos = Position(*where)
        return cls([Trajectory(pos, 0.0, Waypoint(pos, 1.0, math.inf))])

    @classmethod
    def linear(
        cls,
        start: Position | tuple[float, float],
        moves: Sequence[tuple[float, tuple[float, float], float]],
    ) -> "NodePath":
        """Build a path from ``(depart_at, destination, speed)`` moves, resting in between."""
        pos = Position(*start)
        legs: list[Trajectory] = []
        t = 0.0
        for depart_at, dest, speed in moves:
            if depart_at > t:
                legs.append(Trajectory(pos, t, Waypoint(pos, 1.0, depart_at - t)))
                t = depart_at
            leg = Trajectory(pos, t, Waypoint(Position(*dest), speed, 0.0))
            legs.append(leg)
            t = leg.end_time
            pos = leg.waypoint.destination
        legs.append(Trajectory(pos, t, Waypoint(pos, 1.0, math.inf)))
        return cls(legs)

    def leg_at(self, t: float) -> Trajectory:
        idx = bisect.bisect_right(self._starts, t) - 1
        return self.legs[max(idx, 0)]

    def position_at(self, t: float) -> Position:
        return position_at(self.leg_at(t), max(t, self.legs[0].start_time))

    def speed_at(self, t: float) -> float:
        leg = self.leg_at(t)
        return leg.waypoint.speed if leg.start_time <= t < leg.arrive_time else 0.0

    def segments(self, horizon: float) -> list[Segment]:
        out: list[Segment] = []
        for leg in self.legs:
            if leg.start_time >= horizon:
                break
            arrive = min(leg.arrive_time, horizon)
            if arrive > leg.start_time:
                vx, vy = leg.velocity
                out.append(Segment(leg.start_time, arrive, leg.start.x, leg.start.y, vx, vy))
            end = min(leg.end_time, horizon)
            if end > arrive:
                dest = leg.waypoint.destination
                out.append(Segment(arrive, end, dest.x, dest.y, 0.0, 0.0))
        return out


def random_waypoint_path(
    rng: np.random.Generator,
    field: Field,
    speed_range: tuple[float, float],
    pause: float,
    horizon: float,
    start: Position | None = None,
) -> NodePath:
    """Generate legs until the horizon; the first move starts at t=0 with no initial rest."""
    if start is None:
        start = Position(float(rng.uniform(0.0, field.width)), float(rng.uniform(0.0, field.height)))
    legs: list[Trajectory] = []
    t = 0.0
    pos = start
    while t < horizon:
        wp = next_waypoint(rng, field, speed_range, pause)
        leg = Trajectory(pos, t, wp)
        legs.append(leg)
        t = leg.end_time
        pos = wp.destination
    return NodePath(legs)


def _pair_events(a: int, b: int, sa: list[Segment], sb: list[Segment], range_m: float) -> list[LinkEvent]:
    events: list[LinkEvent] = []
    r2 = range_m * range_m
    xa, ya = sa[0].at(sa[0].t0)
    xb, yb = sb[0].at(sb[0].t0)
    state = (xa - xb) ** 2 + (ya - yb) ** 2 <= r2
    i = j = 0
    while i < len(sa) and j < len(sb):
        seg_a, seg_b = sa[i], sb[j]
        lo = max(seg_a.t0, seg_b.t0)
        hi = min(seg_a.t1, seg_b.t1)
        if hi > lo:
            vx = seg_a.vx - seg_b.vx
            vy = seg_a.vy - seg_b.vy
            qa = vx * vx + vy * vy
            if qa > 0.0:
                pa = seg_a.at(lo)
                pb = seg_b.at(lo)
                dx = pa[0] - pb[0]
                dy = pa[1] - pb[1]
                qb = 2.0 * (dx * vx + dy * vy)
                qc = dx * dx + dy * dy - r2
                disc = qb * qb - 4.0 * qa * qc
                if disc > 0.0:
                    root = math.sqrt(disc)
                    span = hi - lo
                    # distance falls through the range at the first root, rises through it at the second
                    for s, up in (((-qb - root) / (2.0 * qa), True), ((-qb + root) / (2.0 * qa), False)):
                        if -_EPS <= s <= span + _EPS and up != state:
                            state = up
                            events.append(LinkEvent(lo + min(max(s, 0.0), span), a, b, up))
        if seg_a.t1 <= seg_b.t1:
            i += 1
        else:
            j += 1
    return events


def link_events(paths: Sequence[NodePath], range_m: float, horizon: float) -> list[LinkEvent]:
    """Exact up/down crossing times for every node pair, sorted by time."""
    if range_m <= 0:
        raise ValueError(f"range must be > 0, got {range_m}")
    segments = [path.segments(horizon) for path in paths]
    events: list[LinkEvent] = []
    for a, b in combinations(range(len(paths)), 2):
        if segments[a] and segments[b]:
            events.extend(_pair_events(a, b, segments[a], segments[b], range_m))
    events.sort()
    logger.debug(f"computed {len(events)} link events", extra={"nodes": len(paths), "horizon": horizon})
    return events


class Topology:
    """Ground-truth geometry of a run: positions, ranges and connectivity at any instant."""

    def __init__(self, paths: Sequence[NodePath], range_m: float):
        self.paths = list(paths)
        self.range_m = range_m
        self._cache_t: float | None = None
        self._cache: dict[int, Position] = {}

    def __len__(self) -> int:
        return len(self.paths)

    def position(self, node: int, t: float) -> Position:
        if t != self._cache_t:
            self._cache_t = t
            self._cache = {}
        pos = self._cache.get(node)
        if pos is None:
            pos = self.paths[node].position_at(t)
            self._cache[node] = pos
        return pos

    def distance(self, a: int, b: int, t: float) -> float:
        return math.dist(self.position(a, t), self.position(b, t))

    def in_range(self, a: int, b: int, t: float) -> bool:
        return self.distance(a, b, t) <= self.range_m

    def neighbors(self, node: int, t: float) -> list[int]:
        return [n for n in range(len(self.paths)) if n != node and self.in_range(node, n, t)]

    def graph(self, t: float) -> nx.Graph:
        """Connectivity graph at time ``t``: one edge per in-range pair."""
        g = nx.Graph()
        g.add_nodes_from(range(len(self.paths)))
        g.add_edges_from((a, b) for a, b in combinations(range(len(self.paths)), 2) if self.in_range(a, b, t))
        return g

    def reachable(self, src: int, dst: int, t: float) -> bool:
        return nx.has_path(self.graph(t), src, dst)
