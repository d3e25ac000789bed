# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled sparse kernels. ``_kernels_py`` mirrors this module in numpy."""

import numpy as np
cimport numpy as cnp

cnp.import_array()


def csr_spmm(const long long[::1] indptr, const long long[::1] indices,
             const double[::1] data, const double[:, ::1] x):
    """Return ``A @ x`` for CSR ``A`` and C-contiguous dense ``x``."""
    cdef Py_ssize_t n = indptr.shape[0] - 1
    cdef Py_ssize_t d = x.shape[1]
    out_arr = np.zeros((n, d), dtype=np.float64)
    cdef double[:, ::1] out = out_arr
    cdef Py_ssize_t i, j, k
    cdef long long p, col
    cdef double w
    with nogil:
        for i in range(n):
            for p in range(indptr[i], indptr[i + 1]):
                col = indices[p]
                w = data[p]
                for k in range(d):
                    out[i, k] += w * x[col, k]
    return out_arr


def csr_matvec(const long long[::1] indptr, const long long[::1] indices,
               const double[::1] data, const double[::1] v):
    cdef Py_ssize_t n = indptr.shape[0] - 1
    out_arr = np.zeros(n, dtype=np.float64)
    cdef double[::1] out = out_arr
    cdef Py_ssize_t i
    cdef long long p
    cdef double acc
    with nogil:
        for i in range(n):
            acc = 0.0
            for p in range(indptr[i], indptr[i + 1]):
                acc += data[p] * v[indices[p]]
            out[i] = acc
    return out_arr
