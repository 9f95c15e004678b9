# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled kernels. Same contract as ``_kernels_ref``; see that module."""

import numpy as np

from libc.math cimport exp, log, log1p, sqrt, INFINITY

MASK_NONE = 0
MASK_FULL = 1
MASK_CAUSAL = 2

BACKEND_NAME = "compiled"


def attention_block(double[:, :, ::1] q, double[:, :, ::1] k, double[:, :, ::1] v,
                    int mask_kind, long q_offset, long k_offset):
    cdef Py_ssize_t tq = q.shape[0], heads = q.shape[1], dim = q.shape[2]
    cdef Py_ssize_t tk = k.shape[0]
    out_arr = np.zeros((tq, heads, dim))
    lse_arr = np.full((heads, tq), -INFINITY)
    if mask_kind == 1:
        return out_arr, lse_arr

    cdef double[:, :, ::1] out = out_arr
    cdef double[:, ::1] lse = lse_arr
    cdef double[::1] row = np.empty(tk)
    cdef double scale = 1.0 / sqrt(<double> dim)
    cdef Py_ssize_t h, i, j, d, nkeys
    cdef long limit
    cdef double s, m, total, w

    for h in range(heads):
        for i in range(tq):
            if mask_kind == 2:
                # causal masks are offset diagonals, so visible keys form a prefix
                limit = q_offset + <long> i - k_offset + 1
                if limit < 0:
                    limit = 0
                elif limit > <long> tk:
                    limit = <long> tk
                nkeys = <Py_ssize_t> limit
            else:
                nkeys = tk
            if nkeys == 0:
                continue
            m = -INFINITY
            for j in range(nkeys):
                s = 0.0
                for d in range(dim):
                    s += q[i, h, d] * k[j, h, d]
                s *= scale
                row[j] = s
                if s > m:
                    m = s
            total = 0.0
            for j in range(nkeys):
                w = exp(row[j] - m)
                row[j] = w
                total += w
            lse[h, i] = m + log(total)
            for j in range(nkeys):
                w = row[j] / total
                for d in range(dim):
                    out[i, h, d] += w * v[j, h, d]
    return out_arr, lse_arr


def merge_state(double[:, :, ::1] acc_out, double[:, ::1] acc_lse,
                double[:, :, ::1] blk_out, double[:, ::1] blk_lse):
    cdef Py_ssize_t tq = acc_out.shape[0], heads = acc_out.shape[1], dim = acc_out.shape[2]
    out_arr = np.empty((tq, heads, dim))
    lse_arr = np.empty((heads, tq))
    cdef double[:, :, ::1] out = out_arr
    cdef double[:, ::1] lse = lse_arr
    cdef Py_ssize_t h, t, d
    cdef double a, b, diff, w, e

    for h in range(heads):
        for t in range(tq):
            a = acc_lse[h, t]
            b = blk_lse[h, t]
            if b == -INFINITY:
                lse[h, t] = a
                for d in range(dim):
                    out[t, h, d] = acc_out[t, h, d]
            elif a == -INFINITY:
                lse[h, t] = b
                for d in range(dim):
                    out[t, h, d] = blk_out[t, h, d]
            else:
                diff = b - a
                if diff >= 0:
                    e = exp(-diff)
                    w = 1.0 / (1.0 + e)
                    lse[h, t] = b + log1p(e)
                else:
                    e = exp(diff)
                    w = e / (1.0 + e)
                    lse[h, t] = a + log1p(e)
                for d in range(dim):
                    out[t, h, d] = acc_out[t, h, d] + w * (blk_out[t, h, d] - acc_out[t, h, d])
    return out_arr, lse_arr
