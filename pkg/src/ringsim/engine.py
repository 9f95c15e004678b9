"""Schedule builders and a deterministic step-synchronous executor.

A :class:`Schedule` is the executable form of a parallelism strategy: for
every step and rank it lists message sends, block computations, and merges
of returned partial results. Four builders are provided.

``build_ring_attention``
    Key/value blocks rotate around the rank ring while each query block stays
    home. At step i rank j computes its own queries against KV chunk
    (j - i) mod P and merges locally; through step P-2 it forwards its
    resident KV chunk to rank j+1. One ring direction carries everything.

``build_token_ring``
    Query blocks rotate forward while finished partial outputs travel in the
    reverse direction back to each query chunk's home rank, using the other
    direction of duplex links. At step i rank j forwards its resident Q chunk
    to j+1 (while i < P-1), sends the partial it computed at step i-1 to that
    chunk's home rank (j - i + 1) mod P (once i >= 2), and computes the
    resident Q chunk against its local K/V. The step-0 result is the rank's
    own chunk and merges locally without transmission. A final phase returns
    the last partial to rank (j + 1) mod P and performs the closing merges.

``build_zigzag_token_ring``
    Causal variant over the zigzag partition (rank r owns chunks r and
    2P-1-r of 2P). Only pairs (q chunk a, kv chunk b) with a > b (full block)
    or a == b (diagonal causal mask) are computed; fully masked pairs are
    skipped. A traveling Q sub-chunk is forwarded only while some remaining
    ring stop still needs it, which is decided statically at build time:
    sub-chunk a is needed at rank r' iff a >= r'.

``build_hybrid``
    M nodes of G ranks. Each phase runs a full intra-node token-ring pass
    against the KV chunks currently resident in the node; between phases
    every rank hands its resident KV chunk to the same-position rank of the
    next node. Query chunks never leave their node. Because the intra-node
    pass leaves Q chunks rotated by one position, later phases run the same
    choreography with a phase-dependent rotation offset; the pass where a
    rank computes its own chunk shifts accordingly.

The executor simulates P rank state machines under a step-barrier contract:
messages sent at step i become visible at step i+1, and final-phase messages
at a terminal merge. Execution is single-threaded and iterates ranks in
ascending order, so identical inputs produce bit-identical outputs and
traces.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .core import MaskKind, MaskSpec, Partial, block_attention, merge_partial
from .errors import ConfigError, DimensionError, ScheduleError
from .partition import Partition, split_contiguous, split_zigzag


class MsgKind(Enum):
    Q_BLOCK = "q_block"
    KV_BLOCK = "kv_block"
    OUT_LSE = "out_lse"


FORWARD_KINDS = (MsgKind.Q_BLOCK, MsgKind.KV_BLOCK)


@dataclass(frozen=True)
class Chunk:
    """One token range of the partition, with the rank that accumulates it."""

    id: int
    start: int
    stop: int
    home: int

    @property
    def tokens(self) -> int:
        return self.stop - self.start


@dataclass(frozen=True)
class MsgPlan:
    src: int
    dst: int
    kind: MsgKind
    chunk_ids: tuple[int, ...]
    payload_elements: int


@dataclass(frozen=True)
class ComputePlan:
    """One (q chunk, kv chunk) block attention; accumulate means the result
    belongs to this rank and merges into the local accumulator immediately."""

    q_chunk: int
    kv_chunk: int
    mask: MaskSpec
    accumulate: bool


@dataclass(frozen=True)
class MergePlan:
    """An expected OUT_LSE arrival: returned partials to fold locally."""

    src: int
    chunk_ids: tuple[int, ...]


@dataclass
class StepPlan:
    sends: dict[int, list[MsgPlan]]
    computes: dict[int, list[ComputePlan]]
    merges: dict[int, list[MergePlan]]

    @classmethod
    def empty(cls, ranks: int) -> "StepPlan":
        return cls({r: [] for r in range(ranks)},
                   {r: [] for r in range(ranks)},
                   {r: [] for r in range(ranks)})


@dataclass
class Schedule:
    kind: str
    ranks: int
    heads: int
    head_dim: int
    causal: bool
    partition: Partition
    chunks: tuple[Chunk, ...]
    steps: list[StepPlan]
    final_phase: StepPlan | None

    @property
    def n_steps(self) -> int:
        """Step count including the final phase when present."""
        return len(self.steps) + (1 if self.final_phase is not None else 0)

    def all_plans(self) -> list[StepPlan]:
        plans = list(self.steps)
        if self.final_phase is not None:
            plans.append(self.final_phase)
        return plans


def _q_elements(tokens: int, heads: int, head_dim: int) -> int:
    return tokens * heads * head_dim


def _kv_elements(tokens: int, heads: int, head_dim: int) -> int:
    return 2 * tokens * heads * head_dim


def _out_lse_elements(tokens: int, heads: int, head_dim: int) -> int:
    # block output (T', H, D) plus its lse matrix (H, T')
    return tokens * heads * head_dim + heads * tokens


def unmasked_pairs(mask: MaskSpec, tq: int, tk: int) -> int:
    """Number of (query, key) score pairs a masked block actually computes."""
    if mask.kind == MaskKind.NONE:
        return tq * tk
    if mask.kind == MaskKind.FULLY_MASKED:
        return 0
    visible = np.clip(mask.q_offset + np.arange(tq) - mask.k_offset + 1, 0, tk)
    return int(visible.sum())


def compute_flops(mask: MaskSpec, tq: int, tk: int, heads: int, head_dim: int) -> int:
    """Matmul flops of one block: 4*H*D per unmasked score pair (QK^T and PV,
    2 flops per multiply-accumulate each)."""
    return 4 * heads * head_dim * unmasked_pairs(mask, tq, tk)


def _trivial_schedule(kind: str, part: Partition, heads: int, head_dim: int,
                      causal: bool) -> Schedule:
    """Single-rank degenerate case: one local compute over the full sequence."""
    seq_len = part.seq_len
    chunks = (Chunk(0, 0, seq_len, 0),)
    mask = MaskSpec.causal(0, 0) if causal else MaskSpec.none()
    step = StepPlan.empty(1)
    step.computes[0].append(ComputePlan(0, 0, mask, accumulate=True))
    return Schedule(kind, 1, heads, head_dim, causal, part, chunks, [step], None)


def _wire_out_lse_merges(sched: Schedule) -> Schedule:
    """Attach a MergePlan at step i+1 for every OUT_LSE sent at step i.

    Sends from the final phase have no following step; the executor folds
    them in at the terminal merge.
    """
    plans = sched.all_plans()
    for i, plan in enumerate(plans[:-1]):
        nxt = plans[i + 1]
        for rank in range(sched.ranks):
            for msg in plan.sends[rank]:
                if msg.kind is MsgKind.OUT_LSE:
                    nxt.merges[msg.dst].append(MergePlan(msg.src, msg.chunk_ids))
    return sched


def build_ring_attention(ranks: int, seq_len: int, heads: int, head_dim: int,
                         causal: bool = False) -> Schedule:
    """Baseline rotating-KV schedule; P steps, one send direction only."""
    part = split_contiguous(seq_len, ranks)
    if ranks == 1:
        return _trivial_schedule("ring", part, heads, head_dim, causal)
    size = seq_len // ranks
    chunks = tuple(Chunk(r, r * size, (r + 1) * size, r) for r in range(ranks))
    steps = []
    for i in range(ranks):
        plan = StepPlan.empty(ranks)
        for j in range(ranks):
            kv_chunk = (j - i) % ranks
            if not causal:
                mask = MaskSpec.none()
            elif j > kv_chunk:
                mask = MaskSpec.none()
            elif j == kv_chunk:
                mask = MaskSpec.causal(chunks[j].start, chunks[kv_chunk].start)
            else:
                mask = MaskSpec.fully_masked()
            plan.computes[j].append(ComputePlan(j, kv_chunk, mask, accumulate=True))
            if i < ranks - 1:
                plan.sends[j].append(MsgPlan(
                    j, (j + 1) % ranks, MsgKind.KV_BLOCK, (kv_chunk,),
                    _kv_elements(size, heads, head_dim)))
        steps.append(plan)
    return Schedule("ring", ranks, heads, head_dim, causal, part, chunks, steps, None)


def _build_node_ring(kind: str, nodes: int, ranks_per_node: int, seq_len: int,
                     heads: int, head_dim: int) -> Schedule:
    """Shared core of token-ring (nodes=1) and the hybrid multi-node scheme."""
    m_nodes, g = nodes, ranks_per_node
    ranks = m_nodes * g
    part = split_contiguous(seq_len, ranks)
    if ranks == 1:
        return _trivial_schedule(kind, part, heads, head_dim, causal=False)
    size = seq_len // ranks
    chunks = tuple(Chunk(r, r * size, (r + 1) * size, r) for r in range(ranks))
    q_payload = _q_elements(size, heads, head_dim)
    kv_payload = _kv_elements(size, heads, head_dim)
    out_payload = _out_lse_elements(size, heads, head_dim)

    steps: list[StepPlan] = []
    final_phase: StepPlan | None = None
    for p in range(m_nodes):
        # after p phases the intra-node Q rotation is offset by p positions,
        # so the step where a rank computes its own chunk is s0 = p mod G
        s0 = p % g
        for s in range(g):
            plan = StepPlan.empty(ranks)
            for m in range(m_nodes):
                for loc in range(g):
                    r = m * g + loc
                    resident = m * g + (loc + p - s) % g
                    kv_chunk = ((m - p) % m_nodes) * g + loc
                    plan.computes[r].append(ComputePlan(
                        resident, kv_chunk, MaskSpec.none(), accumulate=(s == s0)))
                    if s < g - 1:
                        plan.sends[r].append(MsgPlan(
                            r, m * g + (loc + 1) % g, MsgKind.Q_BLOCK,
                            (resident,), q_payload))
                    if s >= 1 and (s - 1) != s0:
                        prev = m * g + (loc + p - (s - 1)) % g
                        plan.sends[r].append(MsgPlan(
                            r, prev, MsgKind.OUT_LSE, (prev,), out_payload))
            steps.append(plan)
        ret = StepPlan.empty(ranks)
        for m in range(m_nodes):
            for loc in range(g):
                r = m * g + loc
                if (g - 1) != s0:
                    prev = m * g + (loc + p - (g - 1)) % g
                    ret.sends[r].append(MsgPlan(
                        r, prev, MsgKind.OUT_LSE, (prev,), out_payload))
                if p < m_nodes - 1:
                    kv_chunk = ((m - p) % m_nodes) * g + loc
                    ret.sends[r].append(MsgPlan(
                        r, ((m + 1) % m_nodes) * g + loc, MsgKind.KV_BLOCK,
                        (kv_chunk,), kv_payload))
        if p < m_nodes - 1:
            steps.append(ret)
        else:
            final_phase = ret
    sched = Schedule(kind, ranks, heads, head_dim, False, part, chunks, steps,
                     final_phase)
    return _wire_out_lse_merges(sched)


def build_token_ring(ranks: int, seq_len: int, heads: int, head_dim: int) -> Schedule:
    """Rotating-Q schedule with reverse-direction result returns (non-causal)."""
    return _build_node_ring("token-ring", 1, ranks, seq_len, heads, head_dim)


def build_hybrid(nodes: int, ranks_per_node: int, seq_len: int, heads: int,
                 head_dim: int) -> Schedule:
    """Token ring inside each node, KV rotation across nodes (non-causal)."""
    if nodes < 1 or ranks_per_node < 1:
        raise ConfigError("nodes and ranks_per_node must be >= 1")
    return _build_node_ring("hybrid", nodes, ranks_per_node, seq_len, heads, head_dim)


def build_zigzag_token_ring(ranks: int, seq_len: int, heads: int,
                            head_dim: int) -> Schedule:
    """Causal token ring over the zigzag partition with static Q pruning."""
    part = split_zigzag(seq_len, ranks)
    if ranks == 1:
        return _trivial_schedule("zigzag-token-ring", part, heads, head_dim,
                                 causal=True)
    p = ranks
    c = seq_len // (2 * p)
    chunks = tuple(Chunk(a, a * c, (a + 1) * c, min(a, 2 * p - 1 - a))
                   for a in range(2 * p))
    out_unit = _out_lse_elements(c, heads, head_dim)

    # traveling set of origin o: sub-chunks still alive, and what the host
    # computed this step (feeds the OUT_LSE return one step later)
    alive = {o: [o, 2 * p - 1 - o] for o in range(p)}
    computed_prev: dict[int, list[int]] = {}
    steps: list[StepPlan] = []
    final_phase: StepPlan | None = None
    for i in range(p + 1):
        plan = StepPlan.empty(p)
        computed_now: dict[int, list[int]] = {}
        for r in range(p):
            if i < p:
                o = (r - i) % p
                kv_ids = (r, 2 * p - 1 - r)
                done = []
                for a in alive[o]:
                    for b in kv_ids:
                        if a > b:
                            mask = MaskSpec.none()
                        elif a == b:
                            mask = MaskSpec.causal(chunks[a].start, chunks[b].start)
                        else:
                            continue
                        plan.computes[r].append(ComputePlan(a, b, mask,
                                                            accumulate=(i == 0)))
                    if any(cp.q_chunk == a for cp in plan.computes[r]):
                        done.append(a)
                computed_now[r] = done
                if i < p - 1:
                    future_hosts = [(o + s) % p for s in range(i + 1, p)]
                    carried = tuple(a for a in alive[o]
                                    if any(a >= h for h in future_hosts))
                    alive[o] = list(carried)
                    plan.sends[r].append(MsgPlan(
                        r, (r + 1) % p, MsgKind.Q_BLOCK, carried,
                        _q_elements(len(carried) * c, heads, head_dim)))
            if i >= 2:
                ids = tuple(computed_prev[r])
                home = (r - i + 1) % p
                plan.sends[r].append(MsgPlan(
                    r, home, MsgKind.OUT_LSE, ids, len(ids) * out_unit))
        computed_prev = computed_now if i < p else computed_prev
        if i < p:
            steps.append(plan)
        else:
            final_phase = plan
    sched = Schedule("zigzag-token-ring", p, heads, head_dim, True, part, chunks,
                     steps, final_phase)
    return _wire_out_lse_merges(sched)


# ---------------------------------------------------------------------------
# Traces and tallies
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class MsgRecord:
    step: int
    src: int
    dst: int
    kind: MsgKind
    elements: int


@dataclass(frozen=True)
class ComputeRecord:
    step: int
    rank: int
    flops: int


@dataclass
class MessageTrace:
    """What a run moved and computed, step by step; input to the netsim."""

    ranks: int
    n_steps: int
    messages: list[MsgRecord] = field(default_factory=list)
    computes: list[ComputeRecord] = field(default_factory=list)


def trace_from_schedule(sched: Schedule) -> MessageTrace:
    """Derive the message/flop trace statically, without numeric execution.

    Executing the schedule yields the identical trace; this path exists so
    timing studies can use problem sizes whose numerics would be wasteful.
    """
    chunk = {ch.id: ch for ch in sched.chunks}
    trace = MessageTrace(sched.ranks, sched.n_steps)
    for step, plan in enumerate(sched.all_plans()):
        for rank in range(sched.ranks):
            for cp in plan.computes[rank]:
                flops = compute_flops(cp.mask, chunk[cp.q_chunk].tokens,
                                      chunk[cp.kv_chunk].tokens,
                                      sched.heads, sched.head_dim)
                trace.computes.append(ComputeRecord(step, rank, flops))
            for msg in plan.sends[rank]:
                trace.messages.append(MsgRecord(step, msg.src, msg.dst, msg.kind,
                                                msg.payload_elements))
    return trace


@dataclass
class VolumeReport:
    """Exact element tallies per (step, sending rank, message kind)."""

    ranks: int
    n_steps: int
    entries: dict[tuple[int, int, MsgKind], int]

    def elements(self, step: int, rank: int, kind: MsgKind) -> int:
        return self.entries.get((step, rank, kind), 0)

    def forward_elements(self, step: int | None = None, rank: int | None = None) -> int:
        return self._total(FORWARD_KINDS, step, rank)

    def reverse_elements(self, step: int | None = None, rank: int | None = None) -> int:
        return self._total((MsgKind.OUT_LSE,), step, rank)

    def _total(self, kinds, step, rank) -> int:
        return sum(n for (s, r, k), n in self.entries.items()
                   if k in kinds
                   and (step is None or s == step)
                   and (rank is None or r == rank))


def comm_volume(sched: Schedule) -> VolumeReport:
    """Tally MsgPlan payloads; forward (Q/KV) and reverse (OUT_LSE) kept apart."""
    entries: dict[tuple[int, int, MsgKind], int] = {}
    for step, plan in enumerate(sched.all_plans()):
        for rank in range(sched.ranks):
            for msg in plan.sends[rank]:
                key = (step, rank, msg.kind)
                entries[key] = entries.get(key, 0) + msg.payload_elements
    return VolumeReport(sched.ranks, sched.n_steps, entries)


# ---------------------------------------------------------------------------
# Execution
# ---------------------------------------------------------------------------

@dataclass
class _InFlight:
    src: int
    dst: int
    kind: MsgKind
    chunk_ids: tuple[int, ...]
    payload: object


def execute(sched: Schedule, q, k, v, causal: bool | None = None
            ) -> tuple[dict[int, Partial], MessageTrace]:
    """Run a schedule numerically over simulated ranks.

    Returns each rank's accumulator for its home query chunk(s), rows in the
    order of the rank's partition ranges, plus the complete message trace.
    Raises :class:`ScheduleError`, naming step and rank, if a compute touches
    a chunk that was never delivered or a merge references an undelivered
    message.
    """
    if causal is not None and causal != sched.causal:
        raise ConfigError(
            f"schedule was built causal={sched.causal}, got causal={causal}")
    q = np.asarray(q, dtype=np.float64)
    k = np.asarray(k, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    part = sched.partition
    if q.shape != (part.seq_len, sched.heads, sched.head_dim):
        raise DimensionError(
            f"q must have shape {(part.seq_len, sched.heads, sched.head_dim)}, "
            f"got {q.shape}")
    if k.shape != q.shape or v.shape != q.shape:
        raise DimensionError("q, k, v must share one global shape")

    chunk = {ch.id: ch for ch in sched.chunks}
    q_store: dict[int, dict[int, np.ndarray]] = {r: {} for r in range(sched.ranks)}
    kv_store: dict[int, dict[int, tuple[np.ndarray, np.ndarray]]] = {
        r: {} for r in range(sched.ranks)}
    for ch in sched.chunks:
        q_store[ch.home][ch.id] = q[ch.start:ch.stop]
        kv_store[ch.home][ch.id] = (k[ch.start:ch.stop], v[ch.start:ch.stop])

    acc = {ch.id: Partial.empty(ch.tokens, sched.heads, sched.head_dim)
           for ch in sched.chunks}
    stash: dict[int, dict[int, Partial] | None] = {r: None for r in range(sched.ranks)}
    in_flight: list[_InFlight] = []
    trace = MessageTrace(sched.ranks, sched.n_steps)

    def fold_return(step: int, rank: int, msg: _InFlight) -> None:
        for cid in msg.chunk_ids:
            if chunk[cid].home != rank:
                raise ScheduleError(
                    f"step {step} rank {rank}: returned chunk {cid} homes at "
                    f"rank {chunk[cid].home}")
            acc[cid] = merge_partial(acc[cid], msg.payload[cid])

    for step, plan in enumerate(sched.all_plans()):
        arrivals: dict[int, list[_InFlight]] = {r: [] for r in range(sched.ranks)}
        for msg in in_flight:
            arrivals[msg.dst].append(msg)
        in_flight = []

        # deliver forward traffic, then fold returned partials per plan
        for rank in range(sched.ranks):
            returned = []
            for msg in arrivals[rank]:
                if msg.kind is MsgKind.Q_BLOCK:
                    for cid, block in zip(msg.chunk_ids, msg.payload):
                        q_store[rank][cid] = block
                elif msg.kind is MsgKind.KV_BLOCK:
                    (cid,) = msg.chunk_ids
                    kv_store[rank][cid] = msg.payload
                else:
                    returned.append(msg)
            expected = [(mp.src, mp.chunk_ids) for mp in plan.merges[rank]]
            got = [(msg.src, msg.chunk_ids) for msg in returned]
            if sorted(expected) != sorted(got):
                raise ScheduleError(
                    f"step {step} rank {rank}: expected returns {expected}, "
                    f"got {got}")
            for mp in plan.merges[rank]:
                msg = next(m for m in returned
                           if (m.src, m.chunk_ids) == (mp.src, mp.chunk_ids))
                returned.remove(msg)
                fold_return(step, rank, msg)

        # capture OUT_LSE payloads before this step's computes refresh the stash
        out_payloads: dict[int, dict[int, Partial]] = {}
        for rank in range(sched.ranks):
            for msg in plan.sends[rank]:
                if msg.kind is MsgKind.OUT_LSE:
                    held = stash[rank]
                    if held is None or set(held) != set(msg.chunk_ids):
                        raise ScheduleError(
                            f"step {step} rank {rank}: OUT_LSE send expects chunks "
                            f"{msg.chunk_ids}, stash holds "
                            f"{sorted(held) if held else None}")
                    out_payloads[rank] = held
                    stash[rank] = None

        for rank in range(sched.ranks):
            results: dict[int, Partial] = {}
            accumulate = None
            for cp in plan.computes[rank]:
                if cp.q_chunk not in q_store[rank]:
                    raise ScheduleError(
                        f"step {step} rank {rank}: q chunk {cp.q_chunk} not resident")
                if cp.kv_chunk not in kv_store[rank]:
                    raise ScheduleError(
                        f"step {step} rank {rank}: kv chunk {cp.kv_chunk} not resident")
                qb = q_store[rank][cp.q_chunk]
                kb, vb = kv_store[rank][cp.kv_chunk]
                block = block_attention(qb, kb, vb, cp.mask)
                if cp.q_chunk in results:
                    results[cp.q_chunk] = merge_partial(results[cp.q_chunk], block)
                else:
                    results[cp.q_chunk] = block
                accumulate = cp.accumulate if accumulate is None else accumulate
                if accumulate != cp.accumulate:
                    raise ScheduleError(
                        f"step {step} rank {rank}: mixed accumulate flags")
                trace.computes.append(ComputeRecord(
                    step, rank,
                    compute_flops(cp.mask, chunk[cp.q_chunk].tokens,
                                  chunk[cp.kv_chunk].tokens,
                                  sched.heads, sched.head_dim)))
            if results:
                if accumulate:
                    for cid in sorted(results):
                        if chunk[cid].home != rank:
                            raise ScheduleError(
                                f"step {step} rank {rank}: accumulate for chunk "
                                f"{cid} homed at rank {chunk[cid].home}")
                        acc[cid] = merge_partial(acc[cid], results[cid])
                else:
                    stash[rank] = results

        for rank in range(sched.ranks):
            for msg in plan.sends[rank]:
                if msg.kind is MsgKind.Q_BLOCK:
                    payload = []
                    for cid in msg.chunk_ids:
                        if cid not in q_store[rank]:
                            raise ScheduleError(
                                f"step {step} rank {rank}: cannot send q chunk "
                                f"{cid}, not resident")
                        payload.append(q_store[rank].pop(cid))
                    in_flight.append(_InFlight(rank, msg.dst, msg.kind,
                                               msg.chunk_ids, payload))
                elif msg.kind is MsgKind.KV_BLOCK:
                    (cid,) = msg.chunk_ids
                    if cid not in kv_store[rank]:
                        raise ScheduleError(
                            f"step {step} rank {rank}: cannot send kv chunk "
                            f"{cid}, not resident")
                    in_flight.append(_InFlight(rank, msg.dst, msg.kind,
                                               msg.chunk_ids, kv_store[rank].pop(cid)))
                else:
                    in_flight.append(_InFlight(rank, msg.dst, msg.kind,
                                               msg.chunk_ids, out_payloads[rank]))
                trace.messages.append(MsgRecord(step, rank, msg.dst, msg.kind,
                                                msg.payload_elements))

    # final-phase returns land after the last barrier
    last = sched.n_steps - 1
    for msg in in_flight:
        if msg.kind is not MsgKind.OUT_LSE:
            raise ScheduleError(
                f"step {last} rank {msg.src}: {msg.kind.value} message left in "
                f"flight after the final step")
        fold_return(last, msg.dst, msg)

    outputs: dict[int, Partial] = {}
    for rank in range(sched.ranks):
        owned = sorted((ch for ch in sched.chunks if ch.home == rank),
                       key=lambda ch: ch.start)
        parts = [acc[ch.id] for ch in owned]
        outputs[rank] = Partial(
            np.concatenate([p.out for p in parts], axis=0),
            np.concatenate([p.lse for p in parts], axis=1))
    return outputs, trace
