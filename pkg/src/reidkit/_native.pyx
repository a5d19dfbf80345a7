# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled row kernels behind reidkit.kernels.

Each function fills rows [start, stop) of a preallocated output so the caller
can fan row chunks out over threads; the loops run without the GIL.
"""

import numpy as np

cimport numpy as cnp
from libc.math cimport sqrt

cnp.import_array()


def euclidean_rows(const double[:, ::1] query, const double[:, ::1] gallery,
                   double[:, ::1] out, Py_ssize_t start, Py_ssize_t stop):
    cdef Py_ssize_t ng = gallery.shape[0]
    cdef Py_ssize_t dim = query.shape[1]
    cdef Py_ssize_t i, j, k
    cdef double acc, diff
    with nogil:
        for i in range(start, stop):
            for j in range(ng):
                acc = 0.0
                for k in range(dim):
                    diff = query[i, k] - gallery[j, k]
                    acc += diff * diff
                out[i, j] = sqrt(acc)


def jaccard_rows(const double[:, ::1] encoding, Py_ssize_t num_query,
                 double[:, ::1] out, Py_ssize_t start, Py_ssize_t stop):
    cdef Py_ssize_t n = encoding.shape[0]
    cdef Py_ssize_t ngal = n - num_query
    cdef Py_ssize_t i, j, p, nnz
    cdef double a, b, minsum
    nz_arr = np.empty(n, dtype=np.intp)
    cdef Py_ssize_t[::1] nz = nz_arr
    with nogil:
        for i in range(start, stop):
            nnz = 0
            for p in range(n):
                if encoding[i, p] != 0.0:
                    nz[nnz] = p
                    nnz += 1
            for j in range(ngal):
                if nnz == 0:
                    out[i, j] = 1.0
                    continue
                minsum = 0.0
                for p in range(nnz):
                    a = encoding[i, nz[p]]
                    b = encoding[num_query + j, nz[p]]
                    minsum += a if a < b else b
                out[i, j] = 1.0 - minsum / (2.0 - minsum)


def ecn_rows(const double[:, ::1] dist, const Py_ssize_t[:, ::1] neighbors,
             Py_ssize_t num_query, double[:, ::1] out,
             Py_ssize_t start, Py_ssize_t stop):
    cdef Py_ssize_t n = dist.shape[0]
    cdef Py_ssize_t ngal = n - num_query
    cdef Py_ssize_t t = neighbors.shape[1]
    cdef Py_ssize_t p, j, k, g
    cdef double acc
    with nogil:
        for p in range(start, stop):
            for j in range(ngal):
                g = num_query + j
                acc = 0.0
                for k in range(t):
                    acc += dist[neighbors[p, k], g]
                for k in range(t):
                    acc += dist[neighbors[g, k], p]
                out[p, j] = acc / (2.0 * t)
