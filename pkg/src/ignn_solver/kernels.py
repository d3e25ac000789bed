"""Kernel backend selection.

The Cython extension is used when it was built; otherwise the numpy fallback is
loaded. Setting ``IGNN_SOLVER_PURE=1`` forces the fallback.
"""

import os

from . import _kernels_py

BACKEND = "python"
_impl = _kernels_py

if os.environ.get("IGNN_SOLVER_PURE", "") not in ("1", "true", "yes"):
    try:
        from . import _kernels as _impl  # type: ignore[no-redef]

        BACKEND = "cython"
    except ImportError:
        _impl = _kernels_py

csr_spmm = _impl.csr_spmm
csr_matvec = _impl.csr_matvec

__all__ = ["BACKEND", "csr_spmm", "csr_matvec"]
