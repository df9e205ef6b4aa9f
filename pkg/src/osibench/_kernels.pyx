# distutils: language = c++
# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled hot loops.

Every reduction accumulates sequentially in float64 in a fixed order so the
results are bit-identical to ``osibench._pykernels``.
"""
import numpy as np

cimport numpy as cnp
from libc.math cimport sqrt
from libc.stdlib cimport free, malloc
from libcpp.algorithm cimport nth_element, sort

cnp.import_array()


def dot_block(const double[:, ::1] tests, const double[:, ::1] refs):
    cdef Py_ssize_t n = tests.shape[0], w = refs.shape[0], d = tests.shape[1]
    if refs.shape[1] != d:
        raise ValueError("dimension mismatch")
    out_arr = np.empty((n, w), dtype=np.float64)
    cdef double[:, ::1] out = out_arr
    cdef Py_ssize_t i, j, k
    cdef double acc
    with nogil:
        for i in range(n):
            for j in range(w):
                acc = 0.0
                for k in range(d):
                    acc = acc + tests[i, k] * refs[j, k]
                out[i, j] = acc
    return out_arr


def row_max_argmax(const double[:, ::1] scores):
    cdef Py_ssize_t n = scores.shape[0], w = scores.shape[1]
    if w == 0:
        raise ValueError("empty score rows")
    best_arr = np.empty(n, dtype=np.float64)
    arg_arr = np.empty(n, dtype=np.int64)
    cdef double[::1] best = best_arr
    cdef long long[::1] arg = arg_arr
    cdef Py_ssize_t i, j, a
    cdef double m
    with nogil:
        for i in range(n):
            m = scores[i, 0]
            a = 0
            for j in range(1, w):
                if scores[i, j] > m:
                    m = scores[i, j]
                    a = j
            best[i] = m
            arg[i] = a
    return best_arr, arg_arr


def score_max(const double[:, ::1] tests, const double[:, ::1] refs):
    cdef Py_ssize_t n = tests.shape[0], w = refs.shape[0], d = tests.shape[1]
    if refs.shape[1] != d:
        raise ValueError("dimension mismatch")
    if w == 0:
        raise ValueError("empty reference set")
    best_arr = np.empty(n, dtype=np.float64)
    arg_arr = np.empty(n, dtype=np.int64)
    cdef double[::1] best = best_arr
    cdef long long[::1] arg = arg_arr
    cdef Py_ssize_t i, j, k, a
    cdef double acc, m
    with nogil:
        for i in range(n):
            m = 0.0
            a = -1
            for j in range(w):
                acc = 0.0
                for k in range(d):
                    acc = acc + tests[i, k] * refs[j, k]
                if a < 0 or acc > m:
                    m = acc
                    a = j
            best[i] = m
            arg[i] = a
    return best_arr, arg_arr


def topk_mean_std(const double[:, ::1] scores, Py_ssize_t k):
    cdef Py_ssize_t n = scores.shape[0], c = scores.shape[1]
    if k < 1 or k > c:
        raise ValueError("k out of range")
    mean_arr = np.empty(n, dtype=np.float64)
    std_arr = np.empty(n, dtype=np.float64)
    cdef double[::1] mean = mean_arr
    cdef double[::1] std = std_arr
    cdef double* buf = <double*>malloc(c * sizeof(double))
    if buf == NULL:
        raise MemoryError()
    cdef Py_ssize_t i, j
    cdef double acc, mu, dv
    try:
        with nogil:
            for i in range(n):
                for j in range(c):
                    buf[j] = scores[i, j]
                # top k land in buf[c-k:], then order just those
                nth_element(buf, buf + (c - k), buf + c)
                sort(buf + (c - k), buf + c)
                # descending order over the top k
                acc = 0.0
                for j in range(c - 1, c - 1 - k, -1):
                    acc = acc + buf[j]
                mu = acc / k
                acc = 0.0
                for j in range(c - 1, c - 1 - k, -1):
                    dv = buf[j] - mu
                    acc = acc + dv * dv
                mean[i] = mu
                std[i] = sqrt(acc / k)
    finally:
        free(buf)
    return mean_arr, std_arr


def row_mean(const double[:, ::1] scores):
    cdef Py_ssize_t n = scores.shape[0], c = scores.shape[1]
    if c == 0:
        raise ValueError("empty rows")
    out_arr = np.empty(n, dtype=np.float64)
    cdef double[::1] out = out_arr
    cdef Py_ssize_t i, j
    cdef double acc
    with nogil:
        for i in range(n):
            acc = 0.0
            for j in range(c):
                acc = acc + scores[i, j]
            out[i] = acc / c
    return out_arr


def sweep_counts(const double[::1] targets, const double[::1] nontargets):
    """Merge-sweep two ascending arrays over their distinct values.

    Returns ``(thresholds, n_target_le, n_nontarget_gt)``.
    """
    cdef Py_ssize_t nt = targets.shape[0], nn = nontargets.shape[0]
    thr_arr = np.empty(nt + nn, dtype=np.float64)
    tle_arr = np.empty(nt + nn, dtype=np.int64)
    ngt_arr = np.empty(nt + nn, dtype=np.int64)
    cdef double[::1] thr = thr_arr
    cdef long long[::1] tle = tle_arr
    cdef long long[::1] ngt = ngt_arr
    cdef Py_ssize_t i = 0, j = 0, m = 0
    cdef double v
    with nogil:
        while i < nt or j < nn:
            if j >= nn or (i < nt and targets[i] <= nontargets[j]):
                v = targets[i]
            else:
                v = nontargets[j]
            while i < nt and targets[i] <= v:
                i += 1
            while j < nn and nontargets[j] <= v:
                j += 1
            thr[m] = v
            tle[m] = i
            ngt[m] = nn - j
            m += 1
    return thr_arr[:m].copy(), tle_arr[:m].copy(), ngt_arr[:m].copy()
