# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled aggregation kernels.

Semantics match glstm_lab.kernels.numpy_ref exactly up to floating-point
summation order: these loops accumulate sequentially in edge order, the
numpy fallback lets reduceat pick its own association, so the two
backends can differ in low-order bits.  Each backend on its own is
deterministic.
"""

import numpy as np

cimport numpy as cnp

cnp.import_array()


def seg_sum(payload, idx, indptr, weights=None):
    cdef double[:, ::1] p = np.ascontiguousarray(payload, dtype=np.float64)
    cdef long long[::1] ix = np.ascontiguousarray(idx, dtype=np.int64)
    cdef long long[::1] ptr = np.ascontiguousarray(indptr, dtype=np.int64)
    cdef Py_ssize_t n_seg = ptr.shape[0] - 1
    cdef Py_ssize_t d = p.shape[1]
    out_arr = np.zeros((n_seg, d), dtype=np.float64)
    cdef double[:, ::1] out = out_arr
    cdef double[::1] w
    cdef Py_ssize_t s, e, j, src
    cdef double we
    if weights is None:
        for s in range(n_seg):
            for e in range(ptr[s], ptr[s + 1]):
                src = ix[e]
                for j in range(d):
                    out[s, j] += p[src, j]
    else:
        w = np.ascontiguousarray(weights, dtype=np.float64)
        for s in range(n_seg):
            for e in range(ptr[s], ptr[s + 1]):
                src = ix[e]
                we = w[e]
                for j in range(d):
                    out[s, j] += we * p[src, j]
    return out_arr


def seg_dot(payload, seg_grad, idx, indptr, weights=None):
    cdef double[:, ::1] p = np.ascontiguousarray(payload, dtype=np.float64)
    cdef double[:, ::1] g = np.ascontiguousarray(seg_grad, dtype=np.float64)
    cdef long long[::1] ix = np.ascontiguousarray(idx, dtype=np.int64)
    cdef long long[::1] ptr = np.ascontiguousarray(indptr, dtype=np.int64)
    cdef Py_ssize_t n_seg = ptr.shape[0] - 1
    cdef Py_ssize_t d = p.shape[1]
    out_arr = np.zeros(ix.shape[0], dtype=np.float64)
    cdef double[::1] out = out_arr
    cdef double[::1] w
    cdef Py_ssize_t s, e, j, src
    cdef double acc
    cdef bint has_w = weights is not None
    if has_w:
        w = np.ascontiguousarray(weights, dtype=np.float64)
    for s in range(n_seg):
        for e in range(ptr[s], ptr[s + 1]):
            src = ix[e]
            acc = 0.0
            for j in range(d):
                acc += p[src, j] * g[s, j]
            out[e] = acc * w[e] if has_w else acc
    return out_arr


def seg_max(values, idx, indptr):
    cdef double[:, ::1] v = np.ascontiguousarray(values, dtype=np.float64)
    cdef long long[::1] ix = np.ascontiguousarray(idx, dtype=np.int64)
    cdef long long[::1] ptr = np.ascontiguousarray(indptr, dtype=np.int64)
    cdef Py_ssize_t n_seg = ptr.shape[0] - 1
    cdef Py_ssize_t d = v.shape[1]
    out_arr = np.full((n_seg, d), -np.inf, dtype=np.float64)
    arg_arr = np.full((n_seg, d), -1, dtype=np.int64)
    cdef double[:, ::1] out = out_arr
    cdef long long[:, ::1] arg = arg_arr
    cdef Py_ssize_t s, e, j, src
    cdef double val
    # Strict > keeps the first edge of a tie; edges are in ascending
    # source order within a segment, so ties resolve to the lowest
    # source index.
    for s in range(n_seg):
        for e in range(ptr[s], ptr[s + 1]):
            src = ix[e]
            for j in range(d):
                val = v[src, j]
                if val > out[s, j]:
                    out[s, j] = val
                    arg[s, j] = src
    return out_arr, arg_arr


def seg_max_backward(seg_grad, arg, n_src):
    cdef double[:, ::1] g = np.ascontiguousarray(seg_grad, dtype=np.float64)
    cdef long long[:, ::1] a = np.ascontiguousarray(arg, dtype=np.int64)
    cdef Py_ssize_t n_seg = g.shape[0]
    cdef Py_ssize_t d = g.shape[1]
    out_arr = np.zeros((n_src, d), dtype=np.float64)
    cdef double[:, ::1] out = out_arr
    cdef Py_ssize_t s, j
    cdef long long src
    for s in range(n_seg):
        for j in range(d):
            src = a[s, j]
            if src >= 0:
                out[src, j] += g[s, j]
    return out_arr


def scatter_rows(rows, idx, n_out):
    cdef double[:, ::1] r = np.ascontiguousarray(rows, dtype=np.float64)
    cdef long long[::1] ix = np.ascontiguousarray(idx, dtype=np.int64)
    cdef Py_ssize_t m = r.shape[0]
    cdef Py_ssize_t d = r.shape[1]
    out_arr = np.zeros((n_out, d), dtype=np.float64)
    cdef double[:, ::1] out = out_arr
    cdef Py_ssize_t i, j, dst
    for i in range(m):
        dst = ix[i]
        for j in range(d):
            out[dst, j] += r[i, j]
    return out_arr
