"""Backend selection for the hot affine LPV kernels.

The compiled extension is used when it imports; otherwise the numpy
fallback is used. Setting ``LPVSUBNET_PURE_PYTHON=1`` forces the fallback.
"""
import os

import numpy as np

from . import _kernels_py

BACKEND = "python"
_impl = _kernels_py

if os.environ.get("LPVSUBNET_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from . import _kernels as _compiled
    except ImportError:  # extension not built
        pass
    else:
        _impl = _compiled
        BACKEND = "cython"


def use_backend(name):
    """Switch backend at runtime (``"python"`` or ``"cython"``); returns the previous one."""
    global _impl, BACKEND
    prev = BACKEND
    if name == "python":
        _impl = _kernels_py
    elif name == "cython":
        from . import _kernels as _compiled

        _impl = _compiled
    else:
        raise ValueError(f"unknown backend {name!r}")
    BACKEND = name
    return prev


def affine_matvec_forward(M, pe, x):
    return _impl.affine_matvec_forward(
        np.ascontiguousarray(M), np.ascontiguousarray(pe), np.ascontiguousarray(x)
    )


def affine_matvec_backward(M, pe, x, Mx, g, need_p):
    return _impl.affine_matvec_backward(
        np.ascontiguousarray(M),
        np.ascontiguousarray(pe),
        np.ascontiguousarray(x),
        np.ascontiguousarray(Mx),
        np.ascontiguousarray(g),
        bool(need_p),
    )
