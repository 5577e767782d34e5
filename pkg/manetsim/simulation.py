"""
Run orchestration: wires mobility, medium, routing agents and traffic for
one scenario and turns the finished ledger into a result row.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import Any, Sequence

from .config import MobilityModel, Protocol, Scenario
from .engine import Simulator
from .medium import Medium
from .metrics import MetricLedger, compute_result
from .mobility import Field, LinkEvent, NodePath, Position, Topology, link_events, random_waypoint_path
from .models import Frame, RunEcho, RunResult
from .pdsr import DsrAgent, PdsrAgent
from .routing import RoutingAgent
from .tora import ToraAgent
from .trace import TraceWriter
from .traffic import TRAFFIC_STREAM, CbrSource, Flow, build_flows
from .utils.logger import get_logger

logger = get_logger("simulation")

AGENTS: dict[Protocol, type[RoutingAgent]] = {
    Protocol.TORA: ToraAgent,
    Protocol.PDSR: PdsrAgent,
    Protocol.DSR: DsrAgent,
}


def build_paths(scenario: Scenario, sim: Simulator) -> list[NodePath]:
    """One path per node; node ``i`` draws from its own ``mobility/i`` stream."""
    field = Field(scenario.area_x, scenario.area_y)
    paths = []
    for i in range(scenario.nodes):
        start = Position(*scenario.positions[i]) if scenario.positions is not None else None
        if scenario.mobility is MobilityModel.STATIC:
            paths.append(NodePath.stationary(start))
        else:
            paths.append(random_waypoint_path(
                sim.rng.stream(f"mobility/{i}"), field, scenario.speed_range,
                scenario.pause_s, scenario.duration_s, start=start,
            ))
    return paths


class Network:
    """Everything one run shares: clock, geometry, channel, ledger and the per-node agents."""

    def __init__(
        self,
        scenario: Scenario,
        tracer: TraceWriter | None = None,
        paths: Sequence[NodePath] | None = None,
    ):
        self.scenario = scenario
        self.tracer = tracer
        self.sim = Simulator(scenario.seed)
        self.ledger = MetricLedger(tracer)
        self.paths = list(paths) if paths is not None else build_paths(scenario, self.sim)
        if len(self.paths) != scenario.nodes:
            raise ValueError(f"got {len(self.paths)} paths for {scenario.nodes} nodes")
        self.topology = Topology(self.paths, scenario.range_m)
        self.medium = Medium(self.sim, self.topology, scenario.bandwidth_bps, self.ledger)
        self.medium.on_unicast_failure = self._unicast_failed

        agent_cls = AGENTS[scenario.protocol]
        self.agents: list[RoutingAgent] = [agent_cls(i, self) for i in range(scenario.nodes)]
        for agent in self.agents:
            agent.neighbors = set(self.topology.neighbors(agent.id, 0.0))
            self.medium.attach(agent.id, agent.on_frame)

        self.flows: list[Flow] = build_flows(scenario, self.sim.rng.stream(TRAFFIC_STREAM))
        self._frame_uids = itertools.count(1)
        self._packet_uids = itertools.count(1)
        self.sources = [CbrSource(flow, self, self._packet_uids.__next__) for flow in self.flows]
        self.link_changes = 0

    def next_uid(self) -> int:
        return next(self._frame_uids)

    @property
    def echo(self) -> RunEcho:
        sc = self.scenario
        return RunEcho(
            protocol=sc.protocol.value,
            nodes=sc.nodes,
            speed_class=sc.speed_class.value,
            pause_s=float(sc.pause_s),
            seed=sc.seed,
            duration_s=float(sc.duration_s),
            flows=tuple(flow.echo for flow in self.flows),
        )

    def _unicast_failed(self, node: int, frame: Frame) -> None:
        self.agents[node].unicast_failed(frame)

    def refuse_data(self, node: int, frame: Frame, height: Any) -> None:
        """``node`` will not take a delivered data frame; its sender learns at once, like a failed unicast."""
        self.ledger.recall(frame.uid, frame.sender)
        self.agents[frame.sender].data_refused(frame, height)

    def _link_event(self, event: LinkEvent) -> None:
        self.link_changes += 1
        if self.tracer is not None:
            self.tracer.emit(self.sim.now, "sys", "link", a=event.a, b=event.b, up=event.up)
        a, b = self.agents[event.a], self.agents[event.b]
        if event.up:
            a.link_up(b.id)
            b.link_up(a.id)
        else:
            a.link_down(b.id)
            b.link_down(a.id)

    def _write_header(self) -> None:
        if self.tracer is None:
            return
        echo = self.echo
        self.tracer.emit(
            0.0, "sys", "scenario", protocol=echo.protocol, nodes=echo.nodes,
            speed_class=echo.speed_class, pause=echo.pause_s, seed=echo.seed, duration=echo.duration_s,
        )
        for flow in self.flows:
            self.tracer.emit(0.0, "sys", "flow", id=flow.id, src=flow.source, dst=flow.sink)

    def start(self) -> None:
        """Write the trace header and schedule link changes and traffic."""
        self._write_header()
        for event in link_events(self.paths, self.scenario.range_m, self.scenario.duration_s):
            if event.time <= self.scenario.duration_s:
                self.sim.schedule(event.time, self._link_event, event, kind="link")
        for source in self.sources:
            source.start()

    def run(self) -> RunResult:
        """Run to the scenario's end and compute the result row."""
        duration = self.scenario.duration_s
        self.start()
        dispatched = self.sim.run_until(duration)
        closed = self.ledger.close_open(duration)
        if self.tracer is not None:
            self.tracer.emit(duration, "sys", "end", events=dispatched)
        result = compute_result(self.echo, self.ledger)
        logger.info(
            f"run finished: {result.data_delivered}/{result.data_sent} delivered",
            extra={"protocol": self.echo.protocol, "seed": self.scenario.seed,
                   "events": dispatched, "closed_open": closed},
        )
        return result


def run_scenario(scenario: Scenario, tracer: TraceWriter | None = None) -> RunResult:
    """Execute one deterministic run of ``scenario``."""
    return Network(scenario, tracer).run()
