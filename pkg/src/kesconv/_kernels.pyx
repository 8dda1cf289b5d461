# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled inner loops; pure-Python twins live in _kernels_py."""

import numpy as np
cimport numpy as cnp
from libc.stdlib cimport calloc, free


def lcs_length(a, b):
    """Length of the longest common subsequence of two int sequences."""
    cdef const cnp.int64_t[::1] x = np.ascontiguousarray(a, dtype=np.int64)
    cdef const cnp.int64_t[::1] y = np.ascontiguousarray(b, dtype=np.int64)
    cdef Py_ssize_t n = x.shape[0], m = y.shape[0], i, j
    cdef long *prev
    cdef long *cur
    cdef long *tmp
    cdef long best
    if n == 0 or m == 0:
        return 0
    prev = <long *> calloc(m + 1, sizeof(long))
    cur = <long *> calloc(m + 1, sizeof(long))
    if prev == NULL or cur == NULL:
        free(prev)
        free(cur)
        raise MemoryError()
    try:
        for i in range(n):
            cur[0] = 0
            for j in range(m):
                if x[i] == y[j]:
                    cur[j + 1] = prev[j] + 1
                elif prev[j + 1] >= cur[j]:
                    cur[j + 1] = prev[j + 1]
                else:
                    cur[j + 1] = cur[j]
            tmp = prev
            prev = cur
            cur = tmp
        best = prev[m]
    finally:
        free(prev)
        free(cur)
    return best


def top1(matrix, query):
    """(index, score) of the largest inner product; the first maximum wins."""
    cdef const double[:, ::1] e = np.ascontiguousarray(matrix, dtype=np.float64)
    cdef const double[::1] q = np.ascontiguousarray(query, dtype=np.float64)
    cdef Py_ssize_t rows = e.shape[0], dim = e.shape[1], i, k
    cdef Py_ssize_t best_i = 0
    cdef double s, best = 0.0
    if rows == 0:
        raise ValueError("empty index")
    if q.shape[0] != dim:
        raise ValueError(f"query dim {q.shape[0]} != index dim {dim}")
    for i in range(rows):
        s = 0.0
        for k in range(dim):
            s += e[i, k] * q[k]
        if i == 0 or s > best:
            best = s
            best_i = i
    return best_i, best
