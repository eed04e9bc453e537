"""Kernel dispatch: compiled extension when available, numpy otherwise.

Set ``ELLADA_PURE_PYTHON=1`` to force the numpy implementations.
"""

import os

from . import _kernels_py

if os.environ.get("ELLADA_PURE_PYTHON", "") not in ("", "0"):
    _impl = _kernels_py
else:
    try:
        from . import _kernels as _impl  # type: ignore[attr-defined]
    except ImportError:  # extension not built
        _impl = _kernels_py

IMPLEMENTATION = _impl.IMPLEMENTATION

smooth_sqrt = _impl.smooth_sqrt
euler_residual = _impl.euler_residual
euler_jacobian = _impl.euler_jacobian
euler_hessian_diag = _impl.euler_hessian_diag
sherman_morrison_update = _impl.sherman_morrison_update
gram_schmidt = _impl.gram_schmidt

__all__ = [
    "IMPLEMENTATION",
    "smooth_sqrt",
    "euler_residual",
    "euler_jacobian",
    "euler_hessian_diag",
    "sherman_morrison_update",
    "gram_schmidt",
]
