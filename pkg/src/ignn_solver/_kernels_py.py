"""Pure numpy fallback for the compiled kernels in ``_kernels.pyx``."""

import numpy as np


def csr_spmm(indptr, indices, data, x):
    n = len(indptr) - 1
    out = np.zeros((n, x.shape[1]))
    if len(indices) == 0:
        return out
    contrib = data[:, None] * x[indices]
    counts = np.diff(indptr)
    nonempty = counts > 0
    # reduceat misbehaves on empty segments, so only reduce rows that own entries
    out[nonempty] = np.add.reduceat(contrib, indptr[:-1][nonempty], axis=0)
    return out


def csr_matvec(indptr, indices, data, v):
    return csr_spmm(indptr, indices, data, v[:, None])[:, 0]
