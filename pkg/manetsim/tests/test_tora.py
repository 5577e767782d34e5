"""
Tests for TORA: height ordering, route creation, link reversal and
partition detection on small hand-built topologies.
"""

import pytest

from ..config import Protocol, Scenario
from ..models import DataPacket, Disposition, Frame, FrameKind
from ..mobility import NodePath
from ..simulation import Network
from ..tora import DataBody, Direction, Height, Ordering, ToraInstance, compare, zero
from ..trace import TraceWriter, read_trace


def tora_network(paths, range_m=100.0, duration=10.0):
    scenario = Scenario(protocol=Protocol.TORA, nodes=len(paths), range_m=range_m, duration_s=duration, flows=0)
    tracer = TraceWriter(keep=True)
    net = Network(scenario, tracer, paths=paths)
    net.start()
    return net, tracer


def records(tracer, ev):
    return [r for r in read_trace(tracer.lines) if r.ev == ev]


def upd_count(tracer, since=0.0, node=None):
    return sum(
        1 for r in records(tracer, "tx")
        if r.fields["kind"] == "UPD" and float(r.t) >= since and (node is None or r.node_id == node)
    )


class TestHeight:
    """Heights are totally ordered; NULL is above everything."""

    def test_lexicographic_order(self):
        assert Height(0.0, 0, 0, 1, 5) < Height(0.0, 0, 0, 2, 1)
        assert Height(1.0, 2, 0, -5, 0) > Height(0.0, 9, 1, 9, 9)
        assert Height(1.0, 2, 1, -5, 0) > Height(1.0, 2, 0, 9, 9)

    def test_null_is_greatest(self):
        assert compare(None, zero(0)) is Ordering.GREATER
        assert compare(zero(0), None) is Ordering.LESS
        assert compare(None, None) is Ordering.EQUAL

    def test_ties_broken_by_node_id(self):
        assert compare(Height(0.0, 0, 0, 2, 3), Height(0.0, 0, 0, 2, 4)) is Ordering.LESS

    def test_reflected_level(self):
        h = Height(2.5, 7, 0, -3, 4).reflected(9)
        assert h == Height(2.5, 7, 1, 0, 9)


class TestToraInstance:
    """Link directions derive from the two heights."""

    def test_directions_and_next_hop(self):
        inst = ToraInstance(dest=0, owner=3, height=Height(0.0, 0, 0, 2, 3))
        inst.neighbors = {
            1: Height(0.0, 0, 0, 1, 1),
            2: Height(0.0, 0, 0, 1, 2),
            4: Height(0.0, 0, 0, 3, 4),
            5: None,
        }
        assert inst.direction(1) is Direction.DOWNSTREAM
        assert inst.direction(4) is Direction.UPSTREAM
        assert inst.direction(5) is Direction.UNDIRECTED
        assert inst.downstream() == [1, 2]
        assert inst.next_hop() == 1

    def test_null_height_has_no_downstream(self):
        inst = ToraInstance(dest=0, owner=3, neighbors={1: zero(0)})
        assert inst.direction(1) is Direction.UNDIRECTED
        assert inst.next_hop() is None


class TestRouteCreation:
    """QRY floods out, UPD builds the destination-oriented DAG."""

    def test_chain_builds_increasing_offsets(self):
        paths = [NodePath.stationary((90.0 * i, 0.0)) for i in range(4)]
        net, _ = tora_network(paths)
        assert net.agents[3].originate_query(0) is True
        net.sim.run_until(1.0)
        for node in range(1, 4):
            assert net.agents[node].height(0) == Height(0.0, 0, 0, node, node)
        assert net.agents[3].next_hop(0) == 2
        assert net.agents[0].height(0) == zero(0)

    def test_second_query_suppressed(self):
        paths = [NodePath.stationary((90.0 * i, 0.0)) for i in range(3)]
        net, _ = tora_network(paths)
        assert net.agents[2].originate_query(0) is True
        assert net.agents[2].originate_query(0) is False
        net.sim.run_until(1.0)
        assert net.agents[2].originate_query(0) is False

    def test_isolated_query_never_completes(self):
        paths = [NodePath.stationary((0.0, 0.0)), NodePath.stationary((500.0, 0.0))]
        net, _ = tora_network(paths)
        net.agents[1].originate_query(0)
        net.sim.run_until(5.0)
        assert net.agents[1].height(0) is None
        assert net.ledger.kind_packets["QRY"] == 0


class TestLinkReversal:
    """Six-node ring: cutting the last downstream link of one node."""

    def build(self):
        # ring A-B-C-D-F-E-A; E slides left at t=1 and drops its link to F at t=1.5
        paths = [
            NodePath.stationary((0.0, 0.0)),          # A, destination
            NodePath.stationary((40.0, 80.0)),        # B
            NodePath.stationary((130.0, 80.0)),       # C
            NodePath.stationary((170.0, 0.0)),        # D
            NodePath.linear((40.0, -80.0), [(1.0, (20.0, -80.0), 20.0)]),  # E
            NodePath.stationary((130.0, -80.0)),      # F
        ]
        net, tracer = tora_network(paths)
        net.agents[3].originate_query(0)
        net.sim.run_until(1.0)
        return net, tracer

    def test_dag_before_failure(self):
        net, _ = self.build()
        d = net.agents[3].instance(0)
        assert d.height == Height(0.0, 0, 0, 3, 3)
        assert d.downstream() == [2, 5]
        assert net.agents[5].next_hop(0) == 4

    def test_new_reference_level_at_failure(self):
        net, tracer = self.build()
        net.sim.run_until(3.0)
        h = net.agents[5].height(0)
        assert h.tau == pytest.approx(1.5, abs=1e-9)
        assert (h.oid, h.r, h.delta, h.id) == (5, 0, 0, 5)

    def test_neighbor_with_alternate_route_absorbs_change(self):
        net, tracer = self.build()
        net.sim.run_until(3.0)
        d = net.agents[3].instance(0)
        assert d.direction(5) is Direction.UPSTREAM
        assert d.downstream() == [2]
        assert d.height == Height(0.0, 0, 0, 3, 3)
        assert net.agents[5].next_hop(0) == 3

    def test_exactly_one_update_after_failure(self):
        net, tracer = self.build()
        net.sim.run_until(3.0)
        assert upd_count(tracer, since=1.4) == 1
        assert upd_count(tracer, since=1.4, node=5) == 1


class TestPartition:
    """Chain whose destination walks away: reflection, then CLR."""

    def build(self):
        paths = [
            NodePath.linear((0.0, 0.0), [(2.0, (-200.0, 0.0), 100.0)]),  # Z, destination
            NodePath.stationary((90.0, 0.0)),    # A
            NodePath.stationary((180.0, 0.0)),   # B
            NodePath.stationary((270.0, 0.0)),   # C
            NodePath.stationary((180.0, 90.0)),  # D
        ]
        net, tracer = tora_network(paths)
        net.agents[3].originate_query(0)
        net.sim.run_until(1.0)
        return net, tracer

    def test_routes_before_partition(self):
        net, _ = self.build()
        assert [net.agents[n].height(0).delta for n in range(1, 5)] == [1, 2, 3, 3]

    def test_edge_nodes_reflect(self):
        net, tracer = self.build()
        net.sim.run_until(5.0)
        reflected = {r.node_id for r in records(tracer, "height") if r.fields["why"] == "reflect"}
        assert reflected == {3, 4}

    def test_reflected_level_propagates_back(self):
        net, tracer = self.build()
        net.sim.run_until(5.0)
        levels = [
            r.fields["h"].split(",") for r in records(tracer, "height")
            if r.node_id == 2 and r.fields["why"] == "propagate"
        ]
        assert [parts[1:3] for parts in levels] == [["1", "0"], ["1", "1"]]

    def test_originator_emits_exactly_one_clr(self):
        net, tracer = self.build()
        net.sim.run_until(5.0)
        clr_by_a = [r for r in records(tracer, "tx") if r.fields["kind"] == "CLR" and r.node_id == 1]
        assert len(clr_by_a) == 1
        partition = records(tracer, "partition")
        assert [r.node_id for r in partition] == [1]
        assert not net.topology.reachable(1, 0, float(partition[0].t))

    def test_every_node_cleared(self):
        net, _ = self.build()
        net.sim.run_until(5.0)
        for node in range(1, 5):
            inst = net.agents[node].instance(0)
            assert inst.height is None
            assert inst.downstream() == []
            assert all(h is None for h in inst.neighbors.values())


class TestDataForwarding:
    """Packets follow strictly decreasing heights."""

    def test_packets_delivered_over_chain(self):
        scenario = Scenario(
            protocol=Protocol.TORA, nodes=4, range_m=100.0, duration_s=5.0,
            flows=1, flow_src=(3,), flow_dst=(0,), cbr_interval_s=0.5,
        )
        paths = [NodePath.stationary((90.0 * i, 0.0)) for i in range(4)]
        result = Network(scenario, paths=paths).run()
        assert result.data_sent == 10
        assert result.data_delivered == 10
        assert result.loop_violations == 0
        assert result.control_by_kind["QRY"]["packets"] >= 1


class TestStaleNeighbourView:
    """A receiver that is not lower than the forwarder turns the packet away."""

    def build(self):
        paths = [NodePath.stationary((90.0 * i, 0.0)) for i in range(3)]
        net, tracer = tora_network(paths)
        net.agents[2].originate_query(0)
        net.sim.run_until(1.0)
        return net, tracer

    def send(self, net, source=2):
        packet = DataPacket(1, 0, source, 0, 512, net.sim.now)
        net.ledger.open_packet(net.sim.now, 1, 0, source, 0, 512)
        net.agents[source].send_data(packet)
        return packet

    def test_raised_height_refuses_and_reroutes(self):
        net, tracer = self.build()
        # node 1 raises its height without telling node 2
        net.agents[1].instance(0).height = Height(5.0, 1, 0, 0, 1)
        self.send(net)
        net.sim.run_until(2.0)
        assert [r.node_id for r in records(tracer, "refuse")] == [1]
        assert net.ledger.records[1].disposition is Disposition.DELIVERED
        assert net.ledger.loop_violations == 0
        assert net.agents[2].instance(0).neighbors[1] == Height(5.0, 1, 0, 0, 1)
        assert net.agents[2].height(0) > Height(5.0, 1, 0, 0, 1)

    def test_consistent_heights_never_refuse(self):
        net, tracer = self.build()
        self.send(net)
        net.sim.run_until(2.0)
        assert records(tracer, "refuse") == []
        assert net.ledger.records[1].disposition is Disposition.DELIVERED

    def test_revisit_counts_as_loop_violation(self):
        net, tracer = self.build()
        packet = DataPacket(7, 0, 2, 0, 512, net.sim.now, trail=[2, 1])
        net.ledger.open_packet(net.sim.now, 7, 0, 2, 0, 512)
        frame = Frame(FrameKind.DATA, 2, 2, 1, 528, DataBody(packet, net.agents[2].height(0)), 7)
        net.agents[1].receive(frame)
        assert net.ledger.loop_violations == 1
        assert [r.fields["uid"] for r in records(tracer, "loop_violation")] == ["7"]
        assert net.ledger.records[7].disposition is Disposition.DROPPED_IN_TRANSIT

    def test_next_hop_skips_trail(self):
        inst = ToraInstance(dest=0, owner=3, height=Height(0.0, 0, 0, 3, 3))
        inst.neighbors = {1: Height(0.0, 0, 0, 1, 1), 2: Height(0.0, 0, 0, 2, 2)}
        assert inst.next_hop() == 1
        assert inst.next_hop(exclude=[1]) == 2
        assert inst.next_hop(exclude=[1, 2]) is None


class TestClearFlood:
    """Each node rebroadcasts a given CLR once, however many copies it hears."""

    def test_single_rebroadcast_per_node(self):
        paths = [
            NodePath.linear((0.0, 0.0), [(2.0, (-200.0, 0.0), 100.0)]),
            NodePath.stationary((90.0, 0.0)),
            NodePath.stationary((180.0, 0.0)),
            NodePath.stationary((270.0, 0.0)),
            NodePath.stationary((180.0, 90.0)),
        ]
        net, tracer = tora_network(paths)
        net.agents[3].originate_query(0)
        net.sim.run_until(5.0)
        clr_tx = [r.node_id for r in records(tracer, "tx") if r.fields["kind"] == "CLR"]
        assert sorted(clr_tx) == [1, 2, 3, 4]
        heard_by_2 = [r for r in records(tracer, "rx") if r.node_id == 2 and r.fields["kind"] == "CLR"]
        assert len(heard_by_2) == 3
