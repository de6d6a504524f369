"""Pure-Python (scipy) versions of the compiled kernels.

scipy's CSR-times-dense product accumulates each row in stored column order
from zero, which is the same order the compiled kernels use.
"""
from __future__ import annotations

import numpy as np
import scipy.sparse as sp


def _matrix(indptr, indices, data, n_in):
    return sp.csr_matrix((data, indices, indptr), shape=(len(indptr) - 1, n_in))


def csr_affine(indptr, indices, data, bias, h, relu):
    out = _matrix(indptr, indices, data, h.shape[0]) @ h
    out = np.ascontiguousarray(out, dtype=np.float64)
    if len(bias):
        out += bias[:, None]
    if relu:
        out[~(out > 0.0)] = 0.0
    return out


def masked_tangent(indptr, indices, data, pre, tangent, relu):
    units, dim, m = tangent.shape
    flat = tangent.reshape(units, dim * m)
    out = _matrix(indptr, indices, data, units) @ flat
    out = np.ascontiguousarray(out, dtype=np.float64).reshape(-1, dim, m)
    if relu:
        out = np.where((pre > 0.0)[:, None, :], out, 0.0)
    return out
