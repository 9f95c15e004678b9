"""Portable seeded random numbers based on SplitMix64.

Verification runs must be reproducible across platforms and library versions,
so random inputs come from an explicitly specified generator rather than from
whatever default the numpy release of the day ships. SplitMix64 holds 64 bits
of state and is a pure function of (seed, draw index):

    state_i = seed + (i + 1) * 0x9E3779B97F4A7C15          (mod 2^64)
    z = state_i
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9               (mod 2^64)
    z = (z ^ (z >> 27)) * 0x94D049BB133111EB               (mod 2^64)
    z = z ^ (z >> 31)

A uniform double in [0, 1) takes the top 53 bits: (z >> 11) * 2**-53.
Because every draw is a hash of its index, the whole stream vectorizes.
"""

import numpy as np

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_MIX1 = np.uint64(0xBF58476D1CE4E5B9)
_MIX2 = np.uint64(0x94D049BB133111EB)


def raw_stream(seed: int, n: int) -> np.ndarray:
    """First ``n`` 64-bit outputs of the SplitMix64 stream for ``seed``."""
    idx = np.arange(1, n + 1, dtype=np.uint64)
    z = np.uint64(seed & 0xFFFFFFFFFFFFFFFF) + idx * _GOLDEN
    z = (z ^ (z >> np.uint64(30))) * _MIX1
    z = (z ^ (z >> np.uint64(27))) * _MIX2
    return z ^ (z >> np.uint64(31))


def uniform(seed: int, shape, low: float = 0.0, high: float = 1.0) -> np.ndarray:
    """Uniform float64 samples in [low, high), reproducible by construction."""
    n = int(np.prod(shape, dtype=np.int64)) if shape else 1
    u = (raw_stream(seed, n) >> np.uint64(11)).astype(np.float64) * 2.0 ** -53
    return (low + (high - low) * u).reshape(shape)


def attention_inputs(seed: int, seq_len: int, heads: int, head_dim: int,
                     low: float = -1.0, high: float = 1.0):
    """Generate a (q, k, v) triple of shape (seq_len, heads, head_dim).

    All three tensors come from one stream: 3 * seq_len * heads * head_dim
    consecutive draws, filled row-major into q, then k, then v.
    """
    n = seq_len * heads * head_dim
    flat = uniform(seed, (3 * n,), low, high)
    shape = (seq_len, heads, head_dim)
    return (flat[:n].reshape(shape),
            flat[n:2 * n].reshape(shape),
            flat[2 * n:].reshape(shape))
