# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled sparse affine kernels.

Each output row is accumulated term by term in stored column order starting
from 0.0, and the bias is added last.  This matches the summation order of
the scipy fallback, so both backends are bitwise identical.
"""
import numpy as np
cimport numpy as cnp

cnp.import_array()


def csr_affine(const int[::1] indptr, const int[::1] indices,
               const double[::1] data, const double[::1] bias,
               const double[:, ::1] h, bint relu):
    cdef Py_ssize_t n_out = indptr.shape[0] - 1
    cdef Py_ssize_t m = h.shape[1]
    cdef Py_ssize_t i, p, k, j
    cdef double w, v, b
    cdef bint has_bias = bias.shape[0] > 0
    out_arr = np.zeros((n_out, m), dtype=np.float64)
    cdef double[:, ::1] out = out_arr
    for i in range(n_out):
        for p in range(indptr[i], indptr[i + 1]):
            j = indices[p]
            w = data[p]
            for k in range(m):
                out[i, k] = out[i, k] + w * h[j, k]
        if has_bias:
            b = bias[i]
            for k in range(m):
                out[i, k] = out[i, k] + b
        if relu:
            for k in range(m):
                v = out[i, k]
                if not v > 0.0:
                    out[i, k] = 0.0
    return out_arr


def masked_tangent(const int[::1] indptr, const int[::1] indices,
                   const double[::1] data, const double[:, ::1] pre,
                   const double[:, :, ::1] tangent, bint relu):
    """Push a forward-mode tangent of shape (units, dim, m) through a layer."""
    cdef Py_ssize_t n_out = indptr.shape[0] - 1
    cdef Py_ssize_t dim = tangent.shape[1]
    cdef Py_ssize_t m = tangent.shape[2]
    cdef Py_ssize_t i, p, k, j, c
    cdef double w
    out_arr = np.zeros((n_out, dim, m), dtype=np.float64)
    cdef double[:, :, ::1] out = out_arr
    for i in range(n_out):
        for p in range(indptr[i], indptr[i + 1]):
            j = indices[p]
            w = data[p]
            for c in range(dim):
                for k in range(m):
                    out[i, c, k] = out[i, c, k] + w * tangent[j, c, k]
        if relu:
            for k in range(m):
                if not pre[i, k] > 0.0:
                    for c in range(dim):
                        out[i, c, k] = 0.0
    return out_arr
