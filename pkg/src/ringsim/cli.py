"""Command line interface: verify, simulate, compare, volume.

Configs are single JSON documents with lower_snake_case keys; unknown keys
are rejected so an experiment file cannot silently drift. Units are fixed:
bandwidth in GB/s (1e9 bytes/s), latency in microseconds, reported times in
milliseconds. Exit codes: 0 success, 1 verification failure, 2 configuration
error, 3 I/O error.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import asdict, dataclass, field

from . import engine, netsim, rng
from .core import dense_attention_oracle, max_relative_error
from .errors import ConfigError, RingsimError
from .partition import global_reorder

VERIFY_TOLERANCE = 1e-10

SCHEDULE_KINDS = ("ring", "token-ring", "zigzag-token-ring", "hybrid")
TOPOLOGY_KINDS = ("full-mesh", "ring", "switch", "matrix")

SUMMARY_HEADER = "schedule,ranks,seq_len,heads,head_dim,step,compute_ms,send_ms,recv_ms,step_ms"
COMPARE_HEADER = "param_value,schedule,total_ms,comm_forward_bytes,comm_reverse_bytes,compute_flops"


@dataclass
class ProblemConfig:
    seq_len: int
    heads: int
    head_dim: int
    causal: bool = False
    seed: int = 0


@dataclass
class ParallelConfig:
    ranks: int
    nodes: int = 1


@dataclass
class ScheduleConfig:
    kind: str


@dataclass
class TopologyConfig:
    kind: str = "full-mesh"
    bandwidth_gbps: object = 25.0   # scalar, or P x P matrix for kind=matrix
    latency_us: object = 5.0


@dataclass
class TimingConfig:
    peak_tflops: float = 125.0
    efficiency: float = 0.5
    element_bytes: int = 2


_SECTIONS = {
    "problem": (ProblemConfig, {"seq_len", "heads", "head_dim", "causal", "seed"}, True),
    "parallel": (ParallelConfig, {"ranks", "nodes"}, True),
    "schedule": (ScheduleConfig, {"kind"}, True),
    "topology": (TopologyConfig, {"kind", "bandwidth_gbps", "latency_us"}, False),
    "timing": (TimingConfig, {"peak_tflops", "efficiency", "element_bytes"}, False),
}


@dataclass
class RunConfig:
    problem: ProblemConfig
    parallel: ParallelConfig
    schedule: ScheduleConfig
    topology: TopologyConfig = field(default_factory=TopologyConfig)
    timing: TimingConfig = field(default_factory=TimingConfig)

    @classmethod
    def from_dict(cls, data: dict) -> "RunConfig":
        unknown = set(data) - set(_SECTIONS)
        if unknown:
            raise ConfigError(f"unknown config section(s): {sorted(unknown)}")
        kwargs = {}
        for name, (section_cls, allowed, required) in _SECTIONS.items():
            if name not in data:
                if required:
                    raise ConfigError(f"missing config section '{name}'")
                continue
            raw = data[name]
            if not isinstance(raw, dict):
                raise ConfigError(f"section '{name}' must be an object")
            bad = set(raw) - allowed
            if bad:
                raise ConfigError(f"unknown key(s) in section '{name}': {sorted(bad)}")
            try:
                kwargs[name] = section_cls(**raw)
            except TypeError as exc:
                raise ConfigError(f"section '{name}': {exc}") from None
        cfg = cls(**kwargs)
        cfg.validate()
        return cfg

    def to_dict(self) -> dict:
        return asdict(self)

    def validate(self) -> None:
        pr, pl, sc, tp, tm = self.problem, self.parallel, self.schedule, self.topology, self.timing
        for label, value in (("seq_len", pr.seq_len), ("heads", pr.heads),
                             ("head_dim", pr.head_dim), ("ranks", pl.ranks),
                             ("nodes", pl.nodes)):
            if not isinstance(value, int) or value < 1:
                raise ConfigError(f"{label} must be a positive integer")
        if sc.kind not in SCHEDULE_KINDS:
            raise ConfigError(
                f"unknown schedule kind '{sc.kind}' (expected one of {SCHEDULE_KINDS})")
        if sc.kind == "zigzag-token-ring":
            if pr.seq_len % (2 * pl.ranks) != 0:
                raise ConfigError(
                    f"2P must divide seq_len (got seq_len={pr.seq_len}, ranks={pl.ranks})")
            if not pr.causal:
                raise ConfigError("zigzag-token-ring schedule requires causal=true")
        else:
            if pr.seq_len % pl.ranks != 0:
                raise ConfigError(
                    f"ranks must divide seq_len (got seq_len={pr.seq_len}, ranks={pl.ranks})")
            if sc.kind in ("token-ring", "hybrid") and pr.causal:
                raise ConfigError(
                    f"{sc.kind} schedule requires causal=false "
                    "(causal attention uses zigzag-token-ring)")
        if sc.kind == "hybrid" and pl.ranks % pl.nodes != 0:
            raise ConfigError(
                f"nodes must divide ranks (got ranks={pl.ranks}, nodes={pl.nodes})")
        if tp.kind not in TOPOLOGY_KINDS:
            raise ConfigError(
                f"unknown topology kind '{tp.kind}' (expected one of {TOPOLOGY_KINDS})")
        if tp.kind != "matrix":
            bw = tp.bandwidth_gbps
            if not isinstance(bw, (int, float)) or not bw > 0:
                raise ConfigError("bandwidth must be positive")
            if not isinstance(tp.latency_us, (int, float)) or tp.latency_us < 0:
                raise ConfigError("latency must be >= 0")
        # TimingModel re-checks these; failing early names the offending field
        if not tm.peak_tflops > 0:
            raise ConfigError("peak_tflops must be positive")
        if not 0 < tm.efficiency <= 1:
            raise ConfigError("efficiency must be in (0, 1]")
        if tm.element_bytes not in (1, 2, 4, 8):
            raise ConfigError("element_bytes must be one of 1, 2, 4, 8")


def load_config(path: str) -> RunConfig:
    with open(path, "r", encoding="utf-8") as fh:
        try:
            data = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"invalid JSON in {path}: {exc}") from None
    if not isinstance(data, dict):
        raise ConfigError("config must be a JSON object")
    return RunConfig.from_dict(data)


def build_schedule(cfg: RunConfig, kind: str | None = None) -> engine.Schedule:
    pr, pl = cfg.problem, cfg.parallel
    kind = kind or cfg.schedule.kind
    if kind == "ring":
        return engine.build_ring_attention(pl.ranks, pr.seq_len, pr.heads,
                                           pr.head_dim, pr.causal)
    if kind == "token-ring":
        return engine.build_token_ring(pl.ranks, pr.seq_len, pr.heads, pr.head_dim)
    if kind == "zigzag-token-ring":
        return engine.build_zigzag_token_ring(pl.ranks, pr.seq_len, pr.heads,
                                              pr.head_dim)
    if kind == "hybrid":
        return engine.build_hybrid(pl.nodes, pl.ranks // pl.nodes, pr.seq_len,
                                   pr.heads, pr.head_dim)
    raise ConfigError(f"unknown schedule kind '{kind}'")


def build_topology(cfg: RunConfig) -> netsim.Topology:
    ranks = cfg.parallel.ranks
    if ranks == 1:
        return netsim.Topology(1, {}, {}, duplex=True)
    tp = cfg.topology
    lat = tp.latency_us if not isinstance(tp.latency_us, (int, float)) \
        else float(tp.latency_us) * 1e-6
    if tp.kind == "matrix":
        bw = tp.bandwidth_gbps
        if not isinstance(bw, list):
            raise ConfigError("matrix topology needs a bandwidth_gbps matrix")
        bw_bytes = [[float(x) * 1e9 for x in row] for row in bw]
        if isinstance(lat, list):
            lat = [[float(x) * 1e-6 for x in row] for row in lat]
        return netsim.load_matrix(bw_bytes, lat, ranks)
    bw = float(tp.bandwidth_gbps) * 1e9
    if tp.kind == "full-mesh":
        return netsim.make_full_mesh(ranks, bw, lat)
    if tp.kind == "ring":
        return netsim.make_ring(ranks, bw, lat)
    if tp.kind == "switch":
        return netsim.make_switch(ranks, bw, lat)
    raise ConfigError(f"unknown topology kind '{tp.kind}'")


def build_timing(cfg: RunConfig) -> netsim.TimingModel:
    tm = cfg.timing
    return netsim.TimingModel(tm.peak_tflops * 1e12, tm.efficiency, tm.element_bytes)


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------

def cmd_verify(cfg: RunConfig, out=None) -> int:
    """Execute the configured schedule numerically and compare to the dense
    oracle; exit 0 iff the max relative error is within tolerance."""
    out = out or sys.stdout
    pr = cfg.problem
    sched = build_schedule(cfg)
    q, k, v = rng.attention_inputs(pr.seed, pr.seq_len, pr.heads, pr.head_dim)
    outputs, _ = engine.execute(sched, q, k, v)
    merged = global_reorder(outputs, sched.partition)
    reference = dense_attention_oracle(q, k, v, causal=pr.causal)
    err = max_relative_error(merged, reference)
    status = "PASS" if err <= VERIFY_TOLERANCE else "FAIL"
    print(f"schedule={sched.kind} ranks={cfg.parallel.ranks} seq_len={pr.seq_len} "
          f"heads={pr.heads} head_dim={pr.head_dim} "
          f"causal={str(pr.causal).lower()} seed={pr.seed}", file=out)
    print(f"max_rel_error={err:.6e} tolerance={VERIFY_TOLERANCE:.6e} status={status}",
          file=out)
    return 0 if status == "PASS" else 1


def timeline_for(cfg: RunConfig, kind: str | None = None) -> netsim.Timeline:
    sched = build_schedule(cfg, kind)
    trace = engine.trace_from_schedule(sched)
    return netsim.simulate(trace, build_topology(cfg), build_timing(cfg))


def summary_csv(cfg: RunConfig, tl: netsim.Timeline) -> str:
    pr = cfg.problem
    prefix = f"{cfg.schedule.kind},{cfg.parallel.ranks},{pr.seq_len},{pr.heads},{pr.head_dim}"
    lines = [SUMMARY_HEADER]
    for step in range(tl.n_steps):
        lines.append(
            f"{prefix},{step},"
            f"{tl.compute[step].max() * 1e3:.6f},"
            f"{tl.outbound[step].max() * 1e3:.6f},"
            f"{tl.inbound[step].max() * 1e3:.6f},"
            f"{tl.step_durations[step] * 1e3:.6f}")
    lines.append(f"{prefix},total,,,,{tl.total_duration * 1e3:.6f}")
    return "\n".join(lines) + "\n"


def cmd_simulate(cfg: RunConfig, trace_path: str, summary_path: str, out=None) -> int:
    """Write the Chrome trace JSON and the per-step CSV summary."""
    out = out or sys.stdout
    tl = timeline_for(cfg)
    with open(trace_path, "w", encoding="utf-8") as fh:
        fh.write(netsim.emit_chrome_trace(tl))
    with open(summary_path, "w", encoding="utf-8") as fh:
        fh.write(summary_csv(cfg, tl))
    print(f"total_ms={tl.total_duration * 1e3:.6f} trace={trace_path} "
          f"summary={summary_path}", file=out)
    return 0


def parse_sweep(spec: str) -> tuple[str, list[int]]:
    """Parse ``key=lo..hi`` into geometric doubling points lo, 2lo, ... <= hi."""
    if "=" not in spec or ".." not in spec:
        raise ConfigError(f"sweep must look like key=lo..hi, got '{spec}'")
    key, _, rng_part = spec.partition("=")
    key = key.strip()
    if key not in ("seq_len", "ranks"):
        raise ConfigError(f"unknown sweep key '{key}' (expected seq_len or ranks)")
    lo_s, _, hi_s = rng_part.partition("..")
    try:
        lo, hi = int(lo_s), int(hi_s)
    except ValueError:
        raise ConfigError(f"sweep bounds must be integers, got '{rng_part}'") from None
    if lo < 1 or hi < lo:
        raise ConfigError(f"sweep range {lo}..{hi} is empty")
    points = []
    x = lo
    while x <= hi:
        points.append(x)
        x *= 2
    return key, points


def cmd_compare(cfg: RunConfig, schedules: list[str], sweep: str, out=None) -> int:
    """Sweep seq_len or ranks geometrically and report one CSV row per
    (sweep point, schedule): total time, directional bytes, and flops."""
    out = out or sys.stdout
    if not schedules:
        raise ConfigError("schedule list must not be empty")
    for kind in schedules:
        if kind not in SCHEDULE_KINDS:
            raise ConfigError(f"unknown schedule kind '{kind}'")
    key, points = parse_sweep(sweep)
    print(COMPARE_HEADER, file=out)
    eb = cfg.timing.element_bytes
    for value in points:
        data = cfg.to_dict()
        data["problem" if key == "seq_len" else "parallel"][key] = value
        for kind in schedules:
            data["schedule"]["kind"] = kind
            point_cfg = RunConfig.from_dict(data)
            sched = build_schedule(point_cfg)
            trace = engine.trace_from_schedule(sched)
            tl = netsim.simulate(trace, build_topology(point_cfg),
                                 build_timing(point_cfg))
            vol = engine.comm_volume(sched)
            flops = sum(rec.flops for rec in trace.computes)
            print(f"{value},{kind},{tl.total_duration * 1e3:.6f},"
                  f"{vol.forward_elements() * eb},{vol.reverse_elements() * eb},"
                  f"{flops}", file=out)
    return 0


def cmd_volume(cfg: RunConfig, out=None) -> int:
    """Print per-step, per-rank, per-direction byte totals for the schedule."""
    out = out or sys.stdout
    sched = build_schedule(cfg)
    vol = engine.comm_volume(sched)
    eb = cfg.timing.element_bytes
    pr = cfg.problem
    print(f"schedule={sched.kind} ranks={sched.ranks} seq_len={pr.seq_len} "
          f"heads={pr.heads} head_dim={pr.head_dim} element_bytes={eb}", file=out)
    for step in range(vol.n_steps):
        for rank in range(vol.ranks):
            fwd = vol.forward_elements(step, rank) * eb
            rev = vol.reverse_elements(step, rank) * eb
            print(f"step={step} rank={rank} forward_bytes={fwd} reverse_bytes={rev}",
                  file=out)
    print(f"total forward_bytes={vol.forward_elements() * eb} "
          f"reverse_bytes={vol.reverse_elements() * eb}", file=out)
    return 0


# ---------------------------------------------------------------------------
# Entry point
# ---------------------------------------------------------------------------

def _make_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ringsim",
        description="Engine and interconnect simulator for sequence-parallel "
                    "attention schedules")
    sub = parser.add_subparsers(dest="command", required=True)

    p_verify = sub.add_parser("verify", help="execute a schedule and check it "
                                             "against the dense oracle")
    p_verify.add_argument("--config", required=True)

    p_sim = sub.add_parser("simulate", help="produce a timing trace and summary")
    p_sim.add_argument("--config", required=True)
    p_sim.add_argument("--trace", required=True, help="Chrome trace JSON path")
    p_sim.add_argument("--summary", required=True, help="per-step CSV path")

    p_cmp = sub.add_parser("compare", help="sweep a parameter across schedules")
    p_cmp.add_argument("--config", required=True)
    p_cmp.add_argument("--schedules", required=True,
                       help="comma-separated schedule kinds")
    p_cmp.add_argument("--sweep", required=True, help="key=lo..hi (doubling)")

    p_vol = sub.add_parser("volume", help="print per-step message byte totals")
    p_vol.add_argument("--config", required=True)
    return parser


def main(argv=None) -> int:
    parser = _make_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else 2
    try:
        cfg = load_config(args.config)
        if args.command == "verify":
            return cmd_verify(cfg)
        if args.command == "simulate":
            return cmd_simulate(cfg, args.trace, args.summary)
        if args.command == "compare":
            schedules = [s.strip() for s in args.schedules.split(",") if s.strip()]
            return cmd_compare(cfg, schedules, args.sweep)
        return cmd_volume(cfg)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return 3
    except RingsimError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
