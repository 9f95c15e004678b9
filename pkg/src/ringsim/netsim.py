"""Interconnect topology models and step-synchronous timing simulation.

The timing model is deliberately per-step rather than packet-level, matching
the engine's barrier contract and keeping every number analytically
checkable:

* compute_duration = flops / (peak_flops * efficiency) per rank and step;
* each message carries elements * element_bytes bytes;
* per directed link and step, occupancy = latency + sum(bytes) / bandwidth,
  i.e. concurrent messages fair-share a link and latency is charged once per
  link per step, not per message;
* a message's time is the sum over its route hops of the hop latency plus
  the slowest shared resource on that hop (store-and-forward between hops,
  concurrent traversal of the resources within one hop);
* a rank's outbound (inbound) duration for a step is the largest path time
  among the messages it sends (receives); with single-hop routes this equals
  the max occupancy over the links it uses;
* per rank, step_duration = max(compute, outbound, inbound): communication
  fully overlaps computation inside a step. The global step time is the max
  over ranks and total_duration is the sum over steps (barrier semantics).

Topologies are resource graphs. Point-to-point topologies (full mesh, ring,
calibrated matrix) give every directed pair its own link resource; duplex
means the two directions are independent. The switch model instead charges
each message against the sender's egress port and the receiver's ingress
port within a single hop, so concurrent flows into one port fair-share it
while a lone message still pays one latency plus bytes / port_bandwidth.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .engine import MessageTrace, MsgKind
from .errors import ConfigError, TopologyError

LinkKey = tuple


@dataclass(frozen=True)
class Link:
    bandwidth: float   # bytes / second
    latency: float     # seconds


@dataclass(frozen=True)
class Hop:
    """One store-and-forward stage: resources traversed concurrently."""

    resources: tuple[LinkKey, ...]
    latency: float


@dataclass
class Topology:
    ranks: int
    links: dict[LinkKey, Link]
    routes: dict[tuple[int, int], tuple[Hop, ...]]
    duplex: bool = True

    def resource_id(self, key: LinkKey) -> LinkKey:
        """Sharing key: with duplex=False the two directions of a pair link
        contend for one resource."""
        if not self.duplex and key[0] == "link":
            _, a, b = key
            return ("link", min(a, b), max(a, b))
        return key


def _check_positive(bandwidth: float, latency: float) -> None:
    if not bandwidth > 0:
        raise ConfigError("bandwidth must be positive")
    if latency < 0:
        raise ConfigError("latency must be >= 0")


def make_full_mesh(ranks: int, per_link_bandwidth: float, latency: float) -> Topology:
    """Direct duplex link between every ordered pair; single-hop routes."""
    if ranks < 2:
        raise ConfigError("full mesh needs at least 2 ranks")
    _check_positive(per_link_bandwidth, latency)
    links = {}
    routes = {}
    for a in range(ranks):
        for b in range(ranks):
            if a == b:
                continue
            key = ("link", a, b)
            links[key] = Link(per_link_bandwidth, latency)
            routes[(a, b)] = (Hop((key,), latency),)
    return Topology(ranks, links, routes, duplex=True)


def make_ring(ranks: int, per_link_bandwidth: float, latency: float) -> Topology:
    """Duplex neighbor links only; non-neighbor routes take the shorter arc,
    store-and-forward per hop. Ties go the ascending direction."""
    if ranks < 2:
        raise ConfigError("ring needs at least 2 ranks")
    _check_positive(per_link_bandwidth, latency)
    links = {}
    for r in range(ranks):
        for nb in ((r + 1) % ranks, (r - 1) % ranks):
            links[("link", r, nb)] = Link(per_link_bandwidth, latency)
    routes = {}
    for a in range(ranks):
        for b in range(ranks):
            if a == b:
                continue
            fwd = (b - a) % ranks
            step = 1 if fwd <= ranks - fwd else -1
            hops = []
            at = a
            while at != b:
                nxt = (at + step) % ranks
                hops.append(Hop((("link", at, nxt),), latency))
                at = nxt
            routes[(a, b)] = tuple(hops)
    return Topology(ranks, links, routes, duplex=True)


def make_switch(ranks: int, port_bandwidth: float, latency: float) -> Topology:
    """Star fabric: messages consume the source egress and destination ingress
    ports in one hop; port contention fair-shares bandwidth within a step."""
    if ranks < 2:
        raise ConfigError("switch needs at least 2 ranks")
    _check_positive(port_bandwidth, latency)
    links = {}
    for r in range(ranks):
        links[("egress", r)] = Link(port_bandwidth, latency)
        links[("ingress", r)] = Link(port_bandwidth, latency)
    routes = {}
    for a in range(ranks):
        for b in range(ranks):
            if a != b:
                routes[(a, b)] = (Hop((("egress", a), ("ingress", b)), latency),)
    return Topology(ranks, links, routes, duplex=True)


def load_matrix(bandwidth, latency, ranks: int | None = None) -> Topology:
    """Topology with exactly the given per-pair direct links.

    ``bandwidth`` is a full P x P matrix in bytes/second (diagonal ignored);
    ``latency`` is a matching matrix or one scalar in seconds. A uniform
    symmetric matrix reproduces :func:`make_full_mesh` exactly.
    """
    bw = [list(row) for row in bandwidth]
    p = len(bw) if ranks is None else ranks
    if len(bw) != p or any(len(row) != p for row in bw):
        raise ConfigError(f"bandwidth matrix must be {p} x {p}")
    if np.isscalar(latency):
        lat = [[float(latency)] * p for _ in range(p)]
    else:
        lat = [list(row) for row in latency]
        if len(lat) != p or any(len(row) != p for row in lat):
            raise ConfigError(f"latency matrix must be {p} x {p}")
    links = {}
    routes = {}
    for a in range(p):
        for b in range(p):
            if a == b:
                continue
            _check_positive(bw[a][b], lat[a][b])
            key = ("link", a, b)
            links[key] = Link(float(bw[a][b]), float(lat[a][b]))
            routes[(a, b)] = (Hop((key,), float(lat[a][b])),)
    return Topology(p, links, routes, duplex=True)


@dataclass(frozen=True)
class TimingModel:
    peak_flops: float              # flops / second
    efficiency: float = 1.0       # fraction of peak actually achieved
    element_bytes: int = 2        # wire size per element (numerics stay f64)

    def __post_init__(self):
        if not self.peak_flops > 0:
            raise ConfigError("peak_flops must be positive")
        if not 0 < self.efficiency <= 1:
            raise ConfigError("efficiency must be in (0, 1]")
        if self.element_bytes not in (1, 2, 4, 8):
            raise ConfigError("element_bytes must be one of 1, 2, 4, 8")


@dataclass(frozen=True)
class MessageTiming:
    step: int
    src: int
    dst: int
    kind: MsgKind
    nbytes: int
    start: float
    end: float
    route: tuple[LinkKey, ...]


@dataclass
class Timeline:
    """Per-rank, per-step durations plus per-message records, in seconds."""

    ranks: int
    n_steps: int
    compute: np.ndarray        # (n_steps, ranks)
    outbound: np.ndarray
    inbound: np.ndarray
    rank_step: np.ndarray
    step_durations: np.ndarray  # (n_steps,)
    step_starts: np.ndarray
    total_duration: float
    messages: list[MessageTiming] = field(default_factory=list)


def simulate(trace: MessageTrace, topo: Topology, tm: TimingModel) -> Timeline:
    """Turn a message/flop trace into a timeline on a topology."""
    if trace.ranks > topo.ranks:
        raise TopologyError(
            f"trace uses {trace.ranks} ranks, topology has {topo.ranks}")
    n_steps, ranks = trace.n_steps, trace.ranks
    throughput = tm.peak_flops * tm.efficiency

    compute = np.zeros((n_steps, ranks))
    for rec in trace.computes:
        compute[rec.step, rec.rank] += rec.flops / throughput

    by_step: dict[int, list] = {}
    for msg in trace.messages:
        by_step.setdefault(msg.step, []).append(msg)

    outbound = np.zeros((n_steps, ranks))
    inbound = np.zeros((n_steps, ranks))
    messages: list[MessageTiming] = []
    step_durations = np.zeros(n_steps)
    step_starts = np.zeros(n_steps)
    clock = 0.0
    for step in range(n_steps):
        step_starts[step] = clock
        loads: dict[LinkKey, int] = {}
        routed = []
        for msg in by_step.get(step, ()):
            route = topo.routes.get((msg.src, msg.dst))
            if route is None:
                raise TopologyError(f"no route from rank {msg.src} to {msg.dst}")
            nbytes = msg.elements * tm.element_bytes
            for hop in route:
                for res in hop.resources:
                    rid = topo.resource_id(res)
                    loads[rid] = loads.get(rid, 0) + nbytes
            routed.append((msg, route, nbytes))
        for msg, route, nbytes in routed:
            path_time = 0.0
            flat_route = []
            for hop in route:
                res_time = max(
                    loads[topo.resource_id(res)] / topo.links[res].bandwidth
                    for res in hop.resources)
                path_time += hop.latency + res_time
                flat_route.extend(hop.resources)
            outbound[step, msg.src] = max(outbound[step, msg.src], path_time)
            inbound[step, msg.dst] = max(inbound[step, msg.dst], path_time)
            messages.append(MessageTiming(step, msg.src, msg.dst, msg.kind,
                                          nbytes, clock, clock + path_time,
                                          tuple(flat_route)))
        step_durations[step] = max(
            float(np.max(compute[step])) if ranks else 0.0,
            float(np.max(outbound[step])) if ranks else 0.0,
            float(np.max(inbound[step])) if ranks else 0.0)
        clock += step_durations[step]

    rank_step = np.maximum(np.maximum(compute, outbound), inbound)
    return Timeline(ranks, n_steps, compute, outbound, inbound, rank_step,
                    step_durations, step_starts, float(clock), messages)


_LANE_ORDER = {"compute": 0, "send": 1, "recv": 2}


def emit_chrome_trace(tl: Timeline) -> str:
    """Render a timeline as a Trace Event Format JSON array.

    One complete ("ph": "X") event per rank, step, and nonzero lane, with
    pid = rank and tid in {compute, send, recv}; timestamps and durations are
    integer microseconds (floored), ordered by (pid, ts, lane).
    """
    events = []
    for rank in range(tl.ranks):
        for step in range(tl.n_steps):
            start_us = math.floor(tl.step_starts[step] * 1e6)
            for lane, value in (("compute", tl.compute[step, rank]),
                                ("send", tl.outbound[step, rank]),
                                ("recv", tl.inbound[step, rank])):
                if value > 0:
                    events.append({
                        "name": f"step{step}",
                        "ph": "X",
                        "ts": start_us,
                        "dur": math.floor(value * 1e6),
                        "pid": rank,
                        "tid": lane,
                    })
    events.sort(key=lambda e: (e["pid"], e["ts"], _LANE_ORDER[e["tid"]]))
    return json.dumps(events, separators=(",", ":"))
