# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled f64 matrix multiply with a fixed inner-sum order.

Each output element accumulates a[i,p]*b[p,j] in increasing p, one rounded
multiply and one rounded add per term. Compiled with -ffp-contract=off so
the result is bit-identical to the numpy fallback and to a naive
left-to-right triple loop.
"""

import numpy as np

cimport numpy as cnp


def matmul_f64(double[:, ::1] a, double[:, ::1] b):
    cdef Py_ssize_t m = a.shape[0]
    cdef Py_ssize_t k = a.shape[1]
    cdef Py_ssize_t n = b.shape[1]
    out_arr = np.zeros((m, n), dtype=np.float64)
    cdef double[:, ::1] out = out_arr
    cdef Py_ssize_t i, j, p
    cdef double aip
    for i in range(m):
        for p in range(k):
            aip = a[i, p]
            for j in range(n):
                out[i, j] = out[i, j] + aip * b[p, j]
    return out_arr
