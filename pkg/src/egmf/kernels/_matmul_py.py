"""Numpy fallback matmul with the same summation order as the compiled kernel.

The loop runs over the shared dimension, so out[i,j] sees one rounded
multiply and one rounded add per p, in increasing p: bit-identical to the
compiled triple loop (which is built with FP contraction disabled).
"""

import numpy as np


def matmul_f64(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    m, k = a.shape
    n = b.shape[1]
    out = np.zeros((m, n), dtype=np.float64)
    for p in range(k):
        out += a[:, p : p + 1] * b[p : p + 1, :]
    return out
