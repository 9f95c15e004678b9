"""Blockwise attention primitives and the log-sum-exp merge rule.

Tensor conventions
------------------
Head tensors (q, k, v, outputs) are float64 arrays of shape (T, H, D):
T tokens, H heads, D dimensions per head. Log-sum-exp matrices are float64
arrays of shape (H, T); entries are finite or -inf, never NaN or +inf.

A :class:`Partial` is the running accumulator pair (out, lse). Wherever
lse(h, t) = -inf the output row is zero: that row has absorbed no keys yet
and behaves as the identity under :func:`merge_partial`. This convention is
what lets schedules skip fully masked blocks outright.

All numeric work runs in float64. Reduced precision appears only in message
size accounting (see :mod:`ringsim.netsim`), never in the arithmetic.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

from . import kernels
from .errors import DimensionError, InputError


class MaskKind(Enum):
    NONE = "none"
    FULLY_MASKED = "fully_masked"
    CAUSAL = "causal"


@dataclass(frozen=True)
class MaskSpec:
    """Which (query, key) score pairs a block computation may use.

    CAUSAL positions both blocks in the global sequence: score (q, k) is
    permitted iff q_offset + q >= k_offset + k.
    """

    kind: MaskKind = MaskKind.NONE
    q_offset: int = 0
    k_offset: int = 0

    @classmethod
    def none(cls) -> "MaskSpec":
        return cls(MaskKind.NONE)

    @classmethod
    def fully_masked(cls) -> "MaskSpec":
        return cls(MaskKind.FULLY_MASKED)

    @classmethod
    def causal(cls, q_offset: int, k_offset: int) -> "MaskSpec":
        return cls(MaskKind.CAUSAL, q_offset, k_offset)


_MASK_CODE = {
    MaskKind.NONE: kernels.MASK_NONE,
    MaskKind.FULLY_MASKED: kernels.MASK_FULL,
    MaskKind.CAUSAL: kernels.MASK_CAUSAL,
}


@dataclass
class Partial:
    """Accumulator pair: out (T, H, D) and lse (H, T) over the same rows."""

    out: np.ndarray
    lse: np.ndarray

    @classmethod
    def empty(cls, tokens: int, heads: int, head_dim: int) -> "Partial":
        """Identity accumulator: zero output, lse = -inf everywhere."""
        return cls(np.zeros((tokens, heads, head_dim)),
                   np.full((heads, tokens), -np.inf))

    @property
    def tokens(self) -> int:
        return self.out.shape[0]

    @property
    def heads(self) -> int:
        return self.out.shape[1]

    @property
    def head_dim(self) -> int:
        return self.out.shape[2]

    def copy(self) -> "Partial":
        return Partial(self.out.copy(), self.lse.copy())


def _as_head_tensor(name: str, x) -> np.ndarray:
    arr = np.ascontiguousarray(x, dtype=np.float64)
    if arr.ndim != 3:
        raise DimensionError(f"{name} must have shape (T, H, D), got {arr.shape}")
    if min(arr.shape) < 1:
        raise DimensionError(f"{name} must have T, H, D >= 1, got {arr.shape}")
    if not np.isfinite(arr).all():
        raise InputError(f"{name} contains non-finite values")
    return arr


def _check_qkv(q, k, v):
    q = _as_head_tensor("q", q)
    k = _as_head_tensor("k", k)
    v = _as_head_tensor("v", v)
    if q.shape[1] != k.shape[1] or q.shape[1] != v.shape[1]:
        raise DimensionError(
            f"head counts differ: q={q.shape[1]} k={k.shape[1]} v={v.shape[1]}")
    if q.shape[2] != k.shape[2] or q.shape[2] != v.shape[2]:
        raise DimensionError(
            f"head dims differ: q={q.shape[2]} k={k.shape[2]} v={v.shape[2]}")
    if k.shape[0] != v.shape[0]:
        raise DimensionError(f"k has {k.shape[0]} tokens but v has {v.shape[0]}")
    return q, k, v


def block_attention(q, k, v, mask: MaskSpec = MaskSpec.none()) -> Partial:
    """Attention of a query block against one key/value block.

    Per head h and query row t, with scaled scores s_j = (q_t . k_j) / sqrt(D)
    over the unmasked keys j:

        lse(h, t)  = log sum_j exp(s_j)
        out(t, h)  = sum_j softmax(s)_j * v_j

    Rows with zero unmasked keys return lse = -inf and out = 0. Scores are
    shifted by the per-row maximum before exponentiation.
    """
    q, k, v = _check_qkv(q, k, v)
    out, lse = kernels.attention_block(
        q, k, v, _MASK_CODE[mask.kind], int(mask.q_offset), int(mask.k_offset))
    return Partial(out, lse)


def merge_partial(acc: Partial, blk: Partial) -> Partial:
    """Fold ``blk`` into ``acc`` under the online-softmax update.

    Elementwise per (h, t) the result satisfies

        lse' = log(exp(lse) + exp(block_lse))
        out' = sigmoid(lse - block_lse) * out + sigmoid(block_lse - lse) * block_out

    with guarded evaluation so large magnitude differences never overflow.
    Rows where either side is -inf pass the other side through exactly, so
    empty accumulators are identities.
    """
    if acc.out.shape != blk.out.shape or acc.lse.shape != blk.lse.shape:
        raise DimensionError(
            f"cannot merge partials of shape {acc.out.shape}/{acc.lse.shape} "
            f"and {blk.out.shape}/{blk.lse.shape}")
    out, lse = kernels.merge_state(
        np.ascontiguousarray(acc.out), np.ascontiguousarray(acc.lse),
        np.ascontiguousarray(blk.out), np.ascontiguousarray(blk.lse))
    return Partial(out, lse)


def dense_attention_oracle(q, k, v, causal: bool = False) -> Partial:
    """Full softmax attention in one pass, for verifying blocked schedules.

    Computes the whole score matrix at once with row-max shifting; no block
    decomposition and no merging is involved, so any folding of
    :func:`block_attention` results through :func:`merge_partial` can be
    checked against it. ``causal`` places q and k at global offset 0 of the
    same sequence and therefore requires equal token counts.
    """
    q, k, v = _check_qkv(q, k, v)
    if causal:
        if q.shape[0] != k.shape[0]:
            raise DimensionError(
                f"causal oracle needs q and k over the same sequence, got "
                f"{q.shape[0]} and {k.shape[0]} tokens")
        mask_code, offsets = kernels.MASK_CAUSAL, (0, 0)
    else:
        mask_code, offsets = kernels.MASK_NONE, (0, 0)
    out, lse = kernels.attention_block(q, k, v, mask_code, *offsets)
    return Partial(out, lse)


def max_relative_error(got: Partial, ref: Partial) -> float:
    """Scaled infinity-norm disagreement between two partials.

    Returns max(|d_out|_inf / |ref.out|_inf, |d_lse|_inf / max(1, |ref.lse|_inf)),
    ignoring positions where both lse entries are -inf. The norm-wise scaling
    avoids the blowup that elementwise relative error has at near-zero output
    entries.
    """
    if got.out.shape != ref.out.shape or got.lse.shape != ref.lse.shape:
        raise DimensionError("cannot compare partials of different shapes")
    out_scale = np.abs(ref.out).max()
    out_err = np.abs(got.out - ref.out).max() / (out_scale if out_scale > 0 else 1.0)

    both_empty = np.isneginf(got.lse) & np.isneginf(ref.lse)
    d_lse = np.where(both_empty, 0.0, got.lse - ref.lse)
    if not np.isfinite(d_lse).all():
        return np.inf
    lse_scale = max(1.0, np.abs(np.where(both_empty, 0.0, ref.lse)).max())
    return float(max(out_err, np.abs(d_lse).max() / lse_scale))
