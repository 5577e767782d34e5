"""
Long randomized runs. Marked slow; select with ``pytest -m slow``.
"""

import networkx as nx
import pytest

from ..config import SPEED_RANGES, Protocol, Scenario, SpeedClass
from ..metrics import conservation_audit
from ..simulation import Network, run_scenario

pytestmark = pytest.mark.slow

FAST = SPEED_RANGES[SpeedClass.FAST]
SEEDS = range(1, 11)


def fast_preset(protocol, seed, **overrides):
    params = dict(
        protocol=protocol, nodes=30, speed_min=FAST[0], speed_max=FAST[1],
        pause_s=0.0, flows=10, seed=seed,
    )
    params.update(overrides)
    return Scenario(**params)


@pytest.fixture(scope="module")
def paired_runs():
    """TORA and PDSR result rows for the same ten fast-preset networks."""
    return [
        (run_scenario(fast_preset(Protocol.TORA, seed)), run_scenario(fast_preset(Protocol.PDSR, seed)))
        for seed in SEEDS
    ]


class TestToraLoopFreedom:
    """Forwarded packets only ever move to a strictly lower height."""

    @pytest.mark.parametrize("seed", range(100))
    def test_random_network_has_no_violations(self, seed):
        net = Network(fast_preset(Protocol.TORA, seed, duration_s=20.0, flows=5))
        result = net.run()
        assert result.loop_violations == 0
        report = conservation_audit(net.ledger.records.values())
        assert report.delivered + report.lost == report.generated


class TestToraQuiescence:
    """Once nodes stop moving and frames drain, every routed node leads to its destination."""

    @pytest.mark.parametrize("seed", range(1, 6))
    def test_routed_nodes_reach_destination(self, seed):
        # one leg each, then a pause past the horizon: nobody moves after ~71 s
        scenario = fast_preset(Protocol.TORA, seed, duration_s=120.0, flow_stop_s=90.0, pause_s=1000.0)
        net = Network(scenario)
        net.run()
        graph = net.topology.graph(scenario.duration_s)

        checked = 0
        for agent in net.agents:
            component = nx.node_connected_component(graph, agent.id)
            for dest in sorted(agent.instances):
                inst = agent.instances[dest]
                if dest == agent.id or inst.height is None or dest not in component:
                    continue
                hop, visited = agent.id, []
                while hop != dest:
                    assert hop not in visited, f"{agent.id}->{dest} cycles through {visited}"
                    visited.append(hop)
                    hop = net.agents[hop].next_hop(dest)
                    assert hop is not None, f"{agent.id}->{dest} dead-ends after {visited}"
                checked += 1
        assert checked > 0


class TestOverheadTrend:
    """PDSR spends fewer bytes on control traffic than TORA on the same network."""

    def test_pdsr_forwarding_efficiency_beats_tora(self, paired_runs):
        wins = sum(
            pdsr.fwd_eff is not None and (tora.fwd_eff is None or pdsr.fwd_eff > tora.fwd_eff)
            for tora, pdsr in paired_runs
        )
        assert wins >= 8


class TestThroughputTrend:
    """Salvage and preemptive switching keep PDSR's throughput at or above TORA's."""

    def test_pdsr_throughput_at_least_tora(self, paired_runs):
        wins = sum(pdsr.throughput_kBps >= tora.throughput_kBps for tora, pdsr in paired_runs)
        assert wins >= 8, [(tora.throughput_kBps, pdsr.throughput_kBps) for tora, pdsr in paired_runs]


class TestRouteLatencyTrend:
    """PDSR's median route-creation latency is below TORA's."""

    def test_pdsr_routes_ready_sooner(self, paired_runs):
        wins = sum(
            pdsr.route_latency_ms is not None and tora.route_latency_ms is not None
            and pdsr.route_latency_ms < tora.route_latency_ms
            for tora, pdsr in paired_runs
        )
        assert wins >= 8, [(tora.route_latency_ms, pdsr.route_latency_ms) for tora, pdsr in paired_runs]
