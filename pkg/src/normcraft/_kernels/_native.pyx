# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled versions of the inner loops in ``_fallback``.

Every routine accumulates in the same order as its numpy twin so the two
backends agree bitwise.
"""

import numpy as np
cimport numpy as cnp

cnp.import_array()


def knn(const double[:, :, ::1] ref, const double[:, :, ::1] qry, Py_ssize_t k):
    cdef Py_ssize_t B = ref.shape[0], N = ref.shape[1], D = ref.shape[2]
    cdef Py_ssize_t Q = qry.shape[1]
    cdef Py_ssize_t b, q, j, d, m, pos
    cdef double acc, diff
    out = np.empty((B, Q, k), dtype=np.int64)
    cdef long long[:, :, ::1] out_v = out
    cdef double[::1] best = np.empty(k, dtype=np.float64)
    cdef long long[::1] best_i = np.empty(k, dtype=np.int64)
    for b in range(B):
        for q in range(Q):
            m = 0
            for j in range(N):
                acc = 0.0
                for d in range(D):
                    diff = qry[b, q, d] - ref[b, j, d]
                    acc = acc + diff * diff
                if m == k and acc >= best[k - 1]:
                    continue
                # j grows monotonically, so equal distances keep insertion order
                pos = m if m < k else k - 1
                while pos > 0 and best[pos - 1] > acc:
                    if pos < k:
                        best[pos] = best[pos - 1]
                        best_i[pos] = best_i[pos - 1]
                    pos -= 1
                best[pos] = acc
                best_i[pos] = j
                if m < k:
                    m += 1
            for j in range(k):
                out_v[b, q, j] = best_i[j]
    return out


def scatter_add(const double[:, :, :, ::1] grad, const long long[:, :, ::1] idx, Py_ssize_t n):
    cdef Py_ssize_t B = grad.shape[0], Q = grad.shape[1], K = grad.shape[2], C = grad.shape[3]
    cdef Py_ssize_t b, q, j, c, t
    out = np.zeros((B, n, C), dtype=np.float64)
    cdef double[:, :, ::1] out_v = out
    for b in range(B):
        for q in range(Q):
            for j in range(K):
                t = idx[b, q, j]
                for c in range(C):
                    out_v[b, t, c] += grad[b, q, j, c]
    return out


def max_reduce(const double[:, :, ::1] x):
    cdef Py_ssize_t O = x.shape[0], K = x.shape[1], I = x.shape[2]
    cdef Py_ssize_t o, j, i
    cdef double v
    out = np.empty((O, I), dtype=np.float64)
    arg = np.zeros((O, I), dtype=np.int64)
    cdef double[:, ::1] out_v = out
    cdef long long[:, ::1] arg_v = arg
    for o in range(O):
        for i in range(I):
            out_v[o, i] = x[o, 0, i]
        for j in range(1, K):
            for i in range(I):
                v = x[o, j, i]
                if v > out_v[o, i]:
                    out_v[o, i] = v
                    arg_v[o, i] = j
    return out, arg


def max_reduce_backward(const double[:, ::1] grad, const long long[:, ::1] arg, Py_ssize_t k):
    cdef Py_ssize_t O = grad.shape[0], I = grad.shape[1]
    cdef Py_ssize_t o, i
    out = np.zeros((O, k, I), dtype=np.float64)
    cdef double[:, :, ::1] out_v = out
    for o in range(O):
        for i in range(I):
            out_v[o, arg[o, i], i] = grad[o, i]
    return out
