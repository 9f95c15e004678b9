"""Topology models, timing simulation, and trace emission."""

import json

import numpy as np
import pytest

from ringsim import (ConfigError, TimingModel, TopologyError,
                     build_ring_attention, build_token_ring, emit_chrome_trace,
                     load_matrix, make_full_mesh, make_ring, make_switch,
                     simulate, trace_from_schedule)
from ringsim.engine import ComputeRecord, MessageTrace, MsgKind, MsgRecord
from ringsim.netsim import Timeline


def manual_trace(ranks, messages, computes=(), n_steps=1):
    trace = MessageTrace(ranks, n_steps)
    trace.messages = [MsgRecord(*m) for m in messages]
    trace.computes = [ComputeRecord(*c) for c in computes]
    return trace


FAST_COMPUTE = TimingModel(1e18, 1.0, 1)


class TestTopologies:
    def test_full_mesh_routes_single_hop(self):
        topo = make_full_mesh(8, 10e9, 1e-6)
        assert len(topo.links) == 8 * 7
        route = topo.routes[(3, 5)]
        assert len(route) == 1 and route[0].resources == (("link", 3, 5),)

    def test_full_mesh_p2(self):
        topo = make_full_mesh(2, 1e9, 0.0)
        assert set(topo.links) == {("link", 0, 1), ("link", 1, 0)}

    def test_ring_shorter_arc(self):
        topo = make_ring(4, 1e9, 0.0)
        assert len(topo.routes[(0, 2)]) == 2
        assert topo.routes[(0, 3)] == (topo.routes[(0, 3)][0],)
        assert topo.routes[(0, 3)][0].resources == (("link", 0, 3),)

    def test_ring_p2_reduces_to_full_mesh(self):
        ring, mesh = make_ring(2, 1e9, 2e-6), make_full_mesh(2, 1e9, 2e-6)
        assert ring.links == mesh.links
        assert ring.routes == mesh.routes

    def test_matrix_uniform_equals_full_mesh(self):
        mesh = make_full_mesh(3, 5e9, 1e-6)
        mat = load_matrix([[0, 5e9, 5e9], [5e9, 0, 5e9], [5e9, 5e9, 0]], 1e-6)
        assert mat.links == mesh.links
        assert mat.routes == mesh.routes

    def test_matrix_shape_errors(self):
        with pytest.raises(ConfigError, match="matrix must be"):
            load_matrix([[0, 1e9]], 0.0)
        with pytest.raises(ConfigError, match="bandwidth must be positive"):
            load_matrix([[0, 0], [1e9, 0]], 0.0)

    def test_invalid_bandwidth_rejected(self):
        with pytest.raises(ConfigError, match="bandwidth must be positive"):
            make_full_mesh(2, 0.0, 0.0)


class TestSimulate:
    def test_no_messages_sums_max_compute(self):
        trace = manual_trace(2, [], computes=[(0, 0, 4e9), (0, 1, 2e9), (1, 1, 6e9)],
                             n_steps=2)
        tl = simulate(trace, make_full_mesh(2, 1e9, 0.0), TimingModel(1e12, 1.0, 2))
        assert tl.step_durations[0] == pytest.approx(4e-3)
        assert tl.step_durations[1] == pytest.approx(6e-3)
        assert tl.total_duration == pytest.approx(10e-3)

    def test_single_message_switch(self):
        trace = manual_trace(4, [(0, 0, 1, MsgKind.Q_BLOCK, 1000)])
        tl = simulate(trace, make_switch(4, 1e9, 5e-6), TimingModel(1e12, 1.0, 2))
        assert tl.total_duration == pytest.approx(5e-6 + 2000 / 1e9)

    def test_switch_two_senders_one_destination_halves_bandwidth(self):
        one = manual_trace(4, [(0, 1, 0, MsgKind.Q_BLOCK, 1000)])
        two = manual_trace(4, [(0, 1, 0, MsgKind.Q_BLOCK, 1000),
                               (0, 2, 0, MsgKind.Q_BLOCK, 1000)])
        topo = make_switch(4, 1e9, 0.0)
        tm = TimingModel(1e12, 1.0, 2)
        t1 = simulate(one, topo, tm).total_duration
        t2 = simulate(two, topo, tm).total_duration
        assert t2 == pytest.approx(2 * t1)

    @pytest.mark.parametrize("ranks", [4, 8])
    def test_switch_incast_scales_with_sources(self, ranks):
        msgs = [(0, src, 0, MsgKind.Q_BLOCK, 1000) for src in range(1, ranks)]
        tl = simulate(manual_trace(ranks, msgs), make_switch(ranks, 1e9, 0.0),
                      TimingModel(1e12, 1.0, 1))
        assert tl.total_duration == pytest.approx((ranks - 1) * 1000 / 1e9)

    def test_ring_multi_hop_pays_each_hop(self):
        trace = manual_trace(4, [(0, 0, 2, MsgKind.OUT_LSE, 1000)])
        tl = simulate(trace, make_ring(4, 1e9, 5e-6), TimingModel(1e12, 1.0, 1))
        assert tl.total_duration == pytest.approx(2 * (5e-6 + 1000 / 1e9))

    def test_no_route_raises(self):
        trace = manual_trace(4, [(0, 0, 3, MsgKind.Q_BLOCK, 10)])
        topo = make_full_mesh(4, 1e9, 0.0)
        del topo.routes[(0, 3)]
        with pytest.raises(TopologyError):
            simulate(trace, topo, TimingModel(1e12, 1.0, 2))

    def test_trace_larger_than_topology_raises(self):
        with pytest.raises(TopologyError):
            simulate(manual_trace(8, []), make_full_mesh(4, 1e9, 0.0),
                     TimingModel(1e12, 1.0, 2))

    def test_zero_latency_infinite_bandwidth_leaves_compute(self):
        sched = build_token_ring(4, 32, 2, 4)
        trace = trace_from_schedule(sched)
        tl = simulate(trace, make_full_mesh(4, 1e30, 0.0), TimingModel(1e12, 0.5, 2))
        expected = trace.computes[0].flops / (1e12 * 0.5)
        for step in range(4):
            assert tl.step_durations[step] == pytest.approx(expected, rel=1e-12)


class TestModelProperties:
    def test_bidirectional_ratio_exact(self):
        # comm-bound duplex mesh: the steady token-ring step carries a result
        # block of (D+1)/D of a Q chunk in reverse, the ring step two chunks
        # one way, so the per-step ratio is (D+1)/(2D)
        p, s, h, d = 4, 2048, 4, 128
        mesh = make_full_mesh(p, 1e9, 0.0)
        token = simulate(trace_from_schedule(build_token_ring(p, s, h, d)),
                         mesh, FAST_COMPUTE)
        ring = simulate(trace_from_schedule(build_ring_attention(p, s, h, d)),
                        mesh, FAST_COMPUTE)
        ratio = token.step_durations[2] / ring.step_durations[0]
        assert ratio == pytest.approx((d + 1) / (2 * d), rel=1e-3)

    def test_monotone_in_message_size_and_bandwidth(self):
        base = manual_trace(4, [(0, 0, 1, MsgKind.Q_BLOCK, 1000),
                                (0, 2, 1, MsgKind.KV_BLOCK, 3000)],
                            computes=[(0, 3, 1e9)])
        bigger = manual_trace(4, [(0, 0, 1, MsgKind.Q_BLOCK, 1500),
                                  (0, 2, 1, MsgKind.KV_BLOCK, 3000)],
                              computes=[(0, 3, 1e9)])
        tm = TimingModel(1e12, 1.0, 2)
        fast = simulate(base, make_full_mesh(4, 2e9, 1e-6), tm).total_duration
        grown = simulate(bigger, make_full_mesh(4, 2e9, 1e-6), tm).total_duration
        slowed = simulate(base, make_full_mesh(4, 1e9, 1e-6), tm).total_duration
        assert grown >= fast
        assert slowed >= fast

    def test_overlap_bound_single_hop(self):
        sched = build_token_ring(4, 64, 2, 8)
        trace = trace_from_schedule(sched)
        tm = TimingModel(1e10, 1.0, 2)
        for topo in (make_full_mesh(4, 1e8, 1e-6), make_switch(4, 1e8, 1e-6)):
            tl = simulate(trace, topo, tm)
            for step in range(tl.n_steps):
                msgs = [m for m in tl.messages if m.step == step]
                max_link = max((m.end - m.start for m in msgs), default=0.0)
                max_compute = tl.compute[step].max()
                low = max(max_compute, max_link)
                assert low - 1e-15 <= tl.step_durations[step] <= low + max_link + 1e-15

    def test_half_duplex_shares_pair_bandwidth(self):
        opposing = manual_trace(2, [(0, 0, 1, MsgKind.Q_BLOCK, 1000),
                                    (0, 1, 0, MsgKind.OUT_LSE, 1000)])
        tm = TimingModel(1e12, 1.0, 1)
        duplex = make_full_mesh(2, 1e9, 0.0)
        t_duplex = simulate(opposing, duplex, tm).total_duration
        half = make_full_mesh(2, 1e9, 0.0)
        half.duplex = False
        t_half = simulate(opposing, half, tm).total_duration
        assert t_duplex == pytest.approx(1000 / 1e9)
        assert t_half == pytest.approx(2 * t_duplex)

    def test_duplex_reversal_symmetric(self):
        msgs = [(0, 0, 1, MsgKind.Q_BLOCK, 1000), (0, 2, 3, MsgKind.KV_BLOCK, 500),
                (1, 3, 0, MsgKind.OUT_LSE, 700)]
        reversed_msgs = [(s, d, sr, k, n) for (s, sr, d, k, n) in msgs]
        topo = make_full_mesh(4, 1e9, 1e-6)
        tm = TimingModel(1e12, 1.0, 2)
        fwd = simulate(manual_trace(4, msgs, n_steps=2), topo, tm)
        rev = simulate(manual_trace(4, reversed_msgs, n_steps=2), topo, tm)
        assert fwd.total_duration == pytest.approx(rev.total_duration, rel=1e-12)

    def test_scale_invariance(self):
        sched = build_token_ring(4, 64, 2, 8)
        trace = trace_from_schedule(sched)
        base = simulate(trace, make_full_mesh(4, 1e9, 0.0), TimingModel(1e12, 1.0, 2))
        doubled = simulate(trace, make_full_mesh(4, 2e9, 0.0), TimingModel(2e12, 1.0, 2))
        assert doubled.total_duration == pytest.approx(base.total_duration / 2,
                                                       rel=1e-12)

    def test_pxb_slower_than_pix_slows_step2(self):
        pix, pxb = 24e9, 12e9
        bw = [[0.0] * 4 for _ in range(4)]
        for a in range(4):
            for b in range(4):
                if a != b:
                    bw[a][b] = pix if (a, b) in ((0, 1), (1, 0), (2, 3), (3, 2)) else pxb
        topo = load_matrix(bw, 1e-6)
        sched = build_token_ring(4, 24000, 32, 128)
        tl = simulate(trace_from_schedule(sched), topo, TimingModel(1e18, 1.0, 2))
        assert tl.step_durations[2] > tl.step_durations[0]
        assert tl.step_durations[2] > tl.step_durations[1]


class TestTimingModel:
    def test_validation(self):
        with pytest.raises(ConfigError):
            TimingModel(0.0, 1.0, 2)
        with pytest.raises(ConfigError):
            TimingModel(1e12, 0.0, 2)
        with pytest.raises(ConfigError):
            TimingModel(1e12, 1.5, 2)
        with pytest.raises(ConfigError):
            TimingModel(1e12, 1.0, 3)


class TestChromeTrace:
    def test_empty_timeline(self):
        tl = Timeline(0, 0, np.zeros((0, 0)), np.zeros((0, 0)), np.zeros((0, 0)),
                      np.zeros((0, 0)), np.zeros(0), np.zeros(0), 0.0, [])
        assert emit_chrome_trace(tl) == "[]"

    def test_single_compute_event(self):
        compute = np.array([[3.5e-3]])
        zeros = np.zeros((1, 1))
        tl = Timeline(1, 1, compute, zeros, zeros, compute,
                      np.array([3.5e-3]), np.array([0.0]), 3.5e-3, [])
        events = json.loads(emit_chrome_trace(tl))
        assert events == [{"name": "step0", "ph": "X", "ts": 0, "dur": 3500,
                           "pid": 0, "tid": "compute"}]

    def test_token_ring_lanes_overlap(self):
        sched = build_token_ring(4, 64, 2, 8)
        tl = simulate(trace_from_schedule(sched), make_full_mesh(4, 1e8, 1e-6),
                      TimingModel(1e10, 1.0, 2))
        events = json.loads(emit_chrome_trace(tl))
        assert {e["pid"] for e in events} == {0, 1, 2, 3}
        assert all(set(e) == {"name", "ph", "ts", "dur", "pid", "tid"}
                   for e in events)
        assert all(e["ph"] == "X" for e in events)
        for step in (0, 1, 2):
            lanes = {e["tid"] for e in events
                     if e["pid"] == 0 and e["name"] == f"step{step}"}
            assert {"compute", "send"} <= lanes
        starts = [e["ts"] for e in events if e["pid"] == 2]
        assert starts == sorted(starts)
