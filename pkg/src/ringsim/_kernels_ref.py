"""Pure numpy reference implementation of the numeric kernels.

Both backends (this module and the compiled extension in ``_kernels.pyx``)
implement the same two primitives with identical semantics:

``attention_block``
    Scaled dot-product attention of a query block against one key/value
    block, returning the block output together with the per-row log-sum-exp
    of the scaled scores. Rows whose keys are all masked out yield
    lse = -inf and a zero output row. Scores are shifted by the row maximum
    before exponentiation so magnitudes up to ~700 stay finite.

``merge_state``
    Folds a block (out, lse) pair into a running accumulator using the
    online-softmax update

        out <- out - sigmoid(block_lse - lse) * (out - block_out)
        lse <- lse - log(sigmoid(lse - block_lse))

    evaluated through guarded forms: the sigmoid branches on the sign of its
    argument and log-sigmoid goes through log1p, so nothing overflows. Rows
    with lse = -inf act as exact identity elements.
"""

import numpy as np

MASK_NONE = 0
MASK_FULL = 1
MASK_CAUSAL = 2

BACKEND_NAME = "python"


def attention_block(q, k, v, mask_kind, q_offset, k_offset):
    tq, heads, dim = q.shape
    tk = k.shape[0]
    if mask_kind == MASK_FULL:
        return (np.zeros((tq, heads, dim)), np.full((heads, tq), -np.inf))

    # (H, Tq, D) @ (H, D, Tk) -> (H, Tq, Tk), batched over heads
    scores = np.matmul(q.transpose(1, 0, 2), k.transpose(1, 2, 0)) / np.sqrt(dim)
    if mask_kind == MASK_CAUSAL:
        allowed = (q_offset + np.arange(tq))[:, None] >= (k_offset + np.arange(tk))[None, :]
        scores = np.where(allowed[None, :, :], scores, -np.inf)

    row_max = scores.max(axis=2)                       # (H, Tq); -inf if fully masked
    live = row_max > -np.inf
    shift = np.where(live, row_max, 0.0)
    weights = np.exp(scores - shift[:, :, None])       # exp(-inf) = 0 on masked entries
    denom = weights.sum(axis=2)
    lse = np.where(live, shift + np.log(np.where(live, denom, 1.0)), -np.inf)
    probs = weights / np.where(live, denom, 1.0)[:, :, None]
    out = np.matmul(probs, v.transpose(1, 0, 2)).transpose(1, 0, 2)
    return np.ascontiguousarray(out), lse


def _sigmoid(x):
    out = np.empty_like(x)
    pos = x >= 0                                       # NaN falls into the neg branch
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def merge_state(acc_out, acc_lse, blk_out, blk_lse):
    with np.errstate(invalid="ignore"):
        diff = blk_lse - acc_lse                       # NaN where both are -inf
        w = _sigmoid(diff)
    w = np.where(np.isnan(diff), 0.0, w)
    lse = np.logaddexp(acc_lse, blk_lse)
    out = acc_out + w.T[:, :, None] * (blk_out - acc_out)
    return out, lse
