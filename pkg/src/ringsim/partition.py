"""Token-dimension partitioning strategies and causal work accounting.

Two strategies are provided. Contiguous partitioning gives rank r the slab
[r*S/P, (r+1)*S/P). Zigzag partitioning cuts the sequence into 2P equal
chunks and pairs them front-to-back: rank r owns chunks r and 2P-1-r. Under
causal attention the pairing equalizes per-rank work exactly, which
contiguous slabs maximally fail to do.

Sequences that do not divide evenly are rejected rather than padded; padding
would blur the exact-comparison guarantees everything downstream relies on.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import Partial
from .errors import ConfigError, DimensionError


@dataclass(frozen=True)
class Partition:
    """rank -> ordered disjoint [start, stop) token ranges covering [0, S)."""

    ranks: int
    seq_len: int
    assignments: tuple[tuple[tuple[int, int], ...], ...]

    def ranges(self, rank: int) -> tuple[tuple[int, int], ...]:
        return self.assignments[rank]

    def owned_tokens(self, rank: int) -> int:
        return sum(stop - start for start, stop in self.assignments[rank])

    def validate(self) -> None:
        """Check cover/disjointness; raises ConfigError on violation."""
        all_ranges = [rng for per_rank in self.assignments for rng in per_rank]
        for start, stop in all_ranges:
            if stop <= start:
                raise ConfigError(f"empty range [{start}, {stop})")
        for per_rank in self.assignments:
            starts = [start for start, _ in per_rank]
            if starts != sorted(starts):
                raise ConfigError("ranges within a rank must ascend")
        all_ranges.sort()
        cursor = 0
        for start, stop in all_ranges:
            if start != cursor:
                raise ConfigError(f"ranges must tile [0, {self.seq_len}) exactly")
            cursor = stop
        if cursor != self.seq_len:
            raise ConfigError(f"ranges must tile [0, {self.seq_len}) exactly")


def split_contiguous(seq_len: int, ranks: int) -> Partition:
    """Equal contiguous slabs; requires ranks | seq_len (no implicit padding)."""
    if ranks < 1:
        raise ConfigError("ranks must be >= 1")
    if seq_len < ranks or seq_len % ranks != 0:
        raise ConfigError(f"ranks must divide seq_len (got seq_len={seq_len}, ranks={ranks})")
    size = seq_len // ranks
    return Partition(
        ranks, seq_len,
        tuple(((r * size, (r + 1) * size),) for r in range(ranks)))


def split_zigzag(seq_len: int, ranks: int) -> Partition:
    """Front-to-back chunk pairing; requires 2 * ranks | seq_len.

    With chunk size c = S / (2P) and chunks numbered 0 .. 2P-1, rank r owns
    chunks r and 2P-1-r, i.e. ranges [r*c, (r+1)*c) and [(2P-1-r)*c, (2P-r)*c).
    """
    if ranks < 1:
        raise ConfigError("ranks must be >= 1")
    if seq_len % (2 * ranks) != 0:
        raise ConfigError(f"2P must divide seq_len (got seq_len={seq_len}, ranks={ranks})")
    c = seq_len // (2 * ranks)
    assignments = []
    for r in range(ranks):
        low, high = r, 2 * ranks - 1 - r
        assignments.append(((low * c, (low + 1) * c), (high * c, (high + 1) * c)))
    return Partition(ranks, seq_len, tuple(assignments))


def causal_work_count(part: Partition) -> tuple[int, ...]:
    """Unmasked (query, key) pairs per rank under full causal attention.

    Query token q sees q + 1 keys, so a rank owning ranges R accumulates
    sum_{q in R} (q + 1). Computed in closed form per range, exact integers.
    """
    counts = []
    for per_rank in part.assignments:
        total = 0
        for start, stop in per_rank:
            # sum_{q=start}^{stop-1} (q+1) = (stop(stop+1) - start(start+1)) / 2
            total += (stop * (stop + 1) - start * (start + 1)) // 2
        counts.append(total)
    return tuple(counts)


def gather_local(arr: np.ndarray, part: Partition, rank: int) -> np.ndarray:
    """Concatenate a rank's owned token rows (axis 0) in range order."""
    return np.concatenate([arr[start:stop] for start, stop in part.ranges(rank)], axis=0)


def global_reorder(outputs: dict[int, Partial], part: Partition) -> Partial:
    """Reassemble per-rank partials into one Partial in global token order.

    Each rank's Partial rows are its owned tokens, in the order of its ranges;
    row counts must match exactly.
    """
    if set(outputs) != set(range(part.ranks)):
        raise DimensionError(
            f"need outputs for ranks 0..{part.ranks - 1}, got {sorted(outputs)}")
    sample = outputs[0]
    heads, head_dim = sample.heads, sample.head_dim
    out = np.empty((part.seq_len, heads, head_dim))
    lse = np.empty((heads, part.seq_len))
    for rank in range(part.ranks):
        partial = outputs[rank]
        expected = part.owned_tokens(rank)
        if partial.tokens != expected:
            raise DimensionError(
                f"rank {rank} produced {partial.tokens} rows, owns {expected}")
        if partial.heads != heads or partial.head_dim != head_dim:
            raise DimensionError("per-rank partials disagree on heads/head_dim")
        cursor = 0
        for start, stop in part.ranges(rank):
            n = stop - start
            out[start:stop] = partial.out[cursor:cursor + n]
            lse[:, start:stop] = partial.lse[:, cursor:cursor + n]
            cursor += n
    return Partial(out, lse)
