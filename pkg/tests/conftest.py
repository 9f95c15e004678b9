"""Shared test helpers.

``naive_attention`` is the independent oracle used to pin expected values:
extended-precision (long double) softmax attention computed the obvious way,
with no max subtraction, no blocking, and no merging. It shares no code with
the package kernels.
"""

import numpy as np
import pytest

import ringsim
from ringsim import rng


def naive_attention(q, k, v, causal=False):
    """Brute-force reference: returns (out, lse) as float64 arrays."""
    ld = np.longdouble
    q = np.asarray(q, dtype=ld)
    k = np.asarray(k, dtype=ld)
    v = np.asarray(v, dtype=ld)
    tq, heads, dim = q.shape
    tk = k.shape[0]
    scale = ld(1) / np.sqrt(ld(dim))
    out = np.zeros((tq, heads, dim), dtype=ld)
    lse = np.full((heads, tq), -np.inf, dtype=ld)
    for h in range(heads):
        for i in range(tq):
            keys = [j for j in range(tk) if not causal or j <= i]
            if not keys:
                continue
            weights = [np.exp(scale * np.dot(q[i, h], k[j, h])) for j in keys]
            total = sum(weights)
            lse[h, i] = np.log(total)
            for w, j in zip(weights, keys):
                out[i, h] += (w / total) * v[j, h]
    return out.astype(np.float64), lse.astype(np.float64)


def random_partial(seed, tokens, heads, head_dim, empty_rows=False):
    """A random accumulator; optionally with some identity (-inf) rows."""
    out = rng.uniform(seed, (tokens, heads, head_dim), -3.0, 3.0)
    lse = rng.uniform(seed + 1, (heads, tokens), -5.0, 5.0)
    if empty_rows:
        drop = rng.uniform(seed + 2, (heads, tokens)) < 0.25
        lse = np.where(drop, -np.inf, lse)
        out = np.where(drop.T[:, :, None], 0.0, out)
    return ringsim.Partial(out, lse)


def assert_partial_close(got, ref, rtol=0.0, atol=0.0):
    np.testing.assert_allclose(got.out, ref.out, rtol=rtol, atol=atol)
    finite = np.isfinite(ref.lse)
    assert np.array_equal(np.isfinite(got.lse), finite)
    np.testing.assert_allclose(got.lse[finite], ref.lse[finite], rtol=rtol, atol=atol)


@pytest.fixture
def small_qkv():
    return rng.attention_inputs(7, 16, 2, 4)
