"""Pure-numpy twins of the compiled kernels in ``_kernels.pyx``.

Used when the extension is not built or ``SLAMP_PURE_PYTHON`` is set.
"""
import numpy as np


def matmul(a, b, out):
    # loop over the inner index so each output element sees the same
    # sequential rounding as the compiled triple loop
    out[...] = 0
    for p in range(a.shape[1]):
        out += a[:, p : p + 1] * b[p : p + 1, :]


def vertex_sq_norms(dw):
    n, m = dw.shape
    sums = np.zeros((1 << n, m))
    # sums[v] = sums[v without its top bit] + dw[top bit]: rows added in ascending order
    for i in range(n):
        lo = 1 << i
        sums[lo : 2 * lo] = sums[:lo] + dw[i]
    out = np.zeros(1 << n)
    for o in range(m):
        out += sums[:, o] * sums[:, o]
    return out
