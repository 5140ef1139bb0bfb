"""Matmul kernel backend, selected once at import.

The compiled Cython kernel is preferred; the numpy fallback produces
bit-identical results (same summation order), only slower. Set
EGMF_KERNEL_BACKEND=python or =cython to force a backend; =cython raises
if the extension is unavailable.
"""

import os

import numpy as np

_requested = os.environ.get("EGMF_KERNEL_BACKEND", "auto")

if _requested not in ("auto", "cython", "python"):
    raise ImportError(f"unknown EGMF_KERNEL_BACKEND {_requested!r}")

if _requested == "python":
    from egmf.kernels._matmul_py import matmul_f64 as _matmul_impl

    BACKEND = "python"
else:
    try:
        from egmf.kernels._matmulx import matmul_f64 as _matmul_impl

        BACKEND = "cython"
    except ImportError:
        if _requested == "cython":
            raise
        from egmf.kernels._matmul_py import matmul_f64 as _matmul_impl

        BACKEND = "python"


def matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """C = A @ B for 2-D f64 arrays; shapes must already agree."""
    a = np.ascontiguousarray(a, dtype=np.float64)
    b = np.ascontiguousarray(b, dtype=np.float64)
    return _matmul_impl(a, b)


def python_matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Fallback implementation regardless of the selected backend."""
    from egmf.kernels._matmul_py import matmul_f64

    a = np.ascontiguousarray(a, dtype=np.float64)
    b = np.ascontiguousarray(b, dtype=np.float64)
    return matmul_f64(a, b)
