# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled hot loops.

Every routine here has an order-identical twin in :mod:`slamp._fallback`.
Matrix products accumulate each output element over the inner index in
ascending order, one rounded multiply and one rounded add per term, so the
two backends agree bit for bit.
"""
import numpy as np

ctypedef fused real:
    float
    double


def matmul(const real[:, ::1] a, const real[:, ::1] b, real[:, ::1] out):
    cdef Py_ssize_t m = a.shape[0]
    cdef Py_ssize_t k = a.shape[1]
    cdef Py_ssize_t n = b.shape[1]
    cdef Py_ssize_t i, j, p
    cdef real aip
    with nogil:
        for i in range(m):
            for j in range(n):
                out[i, j] = 0
            for p in range(k):
                aip = a[i, p]
                # adding a signed zero product never changes a sum that started at +0
                if aip == 0:
                    continue
                for j in range(n):
                    out[i, j] = out[i, j] + aip * b[p, j]


def vertex_sq_norms(const double[:, ::1] dw):
    """Squared norm of ``dw.T @ v`` for every binary vector ``v``.

    Bit ``i`` of the vertex index selects input row ``i``. Row sums are built
    from a prefix table (vertex without its top bit, plus the top row), which
    adds rows in ascending order exactly like the direct sum.
    """
    cdef Py_ssize_t n = dw.shape[0]
    cdef Py_ssize_t m = dw.shape[1]
    cdef Py_ssize_t count = (<Py_ssize_t>1) << n
    cdef Py_ssize_t v, i, o, lo
    cdef double tot
    result = np.empty(count, dtype=np.float64)
    table = np.zeros((count, m), dtype=np.float64)
    cdef double[::1] res = result
    cdef double[:, ::1] s = table
    with nogil:
        for i in range(n):
            lo = (<Py_ssize_t>1) << i
            for v in range(lo):
                for o in range(m):
                    s[lo + v, o] = s[v, o] + dw[i, o]
        for v in range(count):
            tot = 0.0
            for o in range(m):
                tot = tot + s[v, o] * s[v, o]
            res[v] = tot
    return result
