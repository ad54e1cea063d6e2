"""Dense float32 arithmetic and seeded randomness.

Tensors are plain C-ordered ``numpy.ndarray`` objects (row-major, float32 by
default). The few operations whose accumulation order matters for
reproducibility (``matmul`` and everything built on it) dispatch to a compiled
kernel when one is available and to an order-identical numpy loop otherwise.

Randomness comes from numpy's PCG64 bit generator. One seeded
``numpy.random.Generator`` per run; child generators are derived with
:func:`derive_rng` so that independent consumers never share a stream.
"""
from __future__ import annotations

import contextlib
import os

import numpy as np

from . import _fallback

DTYPE = np.float32
RNG_ALGORITHM = "PCG64"

try:
    if os.environ.get("SLAMP_PURE_PYTHON"):
        raise ImportError("pure-python backend forced")
    from . import _kernels
except ImportError:
    _kernels = None

BACKEND = "compiled" if _kernels is not None else "python"
_impl = _kernels if _kernels is not None else _fallback


class DimensionError(ValueError):
    """Operand shapes are incompatible."""


class NonFiniteError(FloatingPointError):
    """A result contains NaN or Inf."""


def available_backends():
    return ["compiled", "python"] if _kernels is not None else ["python"]


def get_kernels(backend=None):
    """Return the kernel module for ``backend`` (defaults to the active one)."""
    if backend is None:
        return _impl
    if backend == "python":
        return _fallback
    if backend == "compiled":
        if _kernels is None:
            raise RuntimeError("compiled kernels are not built")
        return _kernels
    raise ValueError(f"unknown backend {backend!r}")


@contextlib.contextmanager
def use_backend(backend):
    """Temporarily route every kernel call through ``backend``."""
    global _impl
    saved = _impl
    _impl = get_kernels(backend)
    try:
        yield
    finally:
        _impl = saved


def check_finite(x, what="result"):
    if not np.all(np.isfinite(x)):
        raise NonFiniteError(f"{what} contains non-finite values")
    return x


# ---------------------------------------------------------------------------
# randomness
# ---------------------------------------------------------------------------


def make_rng(seed):
    seed = int(seed)
    if not 0 <= seed < 2**64:
        raise ValueError("seed must be an unsigned 64-bit integer")
    return np.random.Generator(np.random.PCG64(seed))


def derive_rng(seed, *keys):
    """Independent generator for a named sub-task of run ``seed``."""
    words = [int(seed) & 0xFFFFFFFF, int(seed) >> 32]
    for key in keys:
        if isinstance(key, str):
            words.extend(key.encode("utf-8"))
        else:
            words.append(int(key))
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(words)))


def rng_uniform(rng, shape, low=0.0, high=1.0):
    return rng.uniform(low, high, size=shape).astype(DTYPE)


def rng_bernoulli(rng, p, shape):
    p = np.asarray(p, dtype=np.float64)
    if np.any(p < 0) or np.any(p > 1):
        raise ValueError("bernoulli probability must lie in [0, 1]")
    return (rng.random(shape) < p).astype(DTYPE)


# ---------------------------------------------------------------------------
# arithmetic
# ---------------------------------------------------------------------------


def matmul(a, b, backend=None):
    """``a @ b`` with each element accumulated over ``k`` in ascending order."""
    a = np.asarray(a)
    b = np.asarray(b)
    if a.ndim != 2 or b.ndim != 2:
        raise DimensionError("matmul expects 2-d operands")
    if a.shape[1] != b.shape[0]:
        raise DimensionError(f"inner dimensions differ: {a.shape} x {b.shape}")
    # float64 only when an operand already is; everything else computes in float32
    dtype = np.float64 if np.float64 in (a.dtype, b.dtype) else DTYPE
    a = np.ascontiguousarray(a, dtype=dtype)
    b = np.ascontiguousarray(b, dtype=dtype)
    # the compiled loop skips zero entries of a, so 0 * inf must be caught here
    check_finite(a, "matmul operand")
    check_finite(b, "matmul operand")
    out = np.empty((a.shape[0], b.shape[1]), dtype=dtype)
    get_kernels(backend).matmul(a, b, out)
    return check_finite(out, "matmul")


_BINARY = {
    "add": np.add,
    "sub": np.subtract,
    "mul": np.multiply,
}


def elementwise(op, a, b=None):
    a = np.asarray(a)
    if op == "square":
        if b is not None:
            raise TypeError("square is unary")
        return check_finite(np.multiply(a, a), op)
    if op not in _BINARY:
        raise ValueError(f"unknown elementwise op {op!r}")
    b = np.asarray(b)
    if a.shape != b.shape:
        raise DimensionError(f"shape mismatch: {a.shape} vs {b.shape}")
    return check_finite(_BINARY[op](a, b), op)


def conv_output_size(size, k, stride, padding):
    if stride < 1:
        raise ValueError("stride must be >= 1")
    if k > size + 2 * padding:
        raise DimensionError("kernel larger than padded input")
    return (size + 2 * padding - k) // stride + 1


def im2col(x, k, stride, padding):
    """Unfold ``x`` of shape (N, C, H, W) into (C*k*k, N*Ho*Wo) columns.

    Row order is (channel, ky, kx) row-major, matching a flattened kernel.
    """
    n, c, h, w = x.shape
    ho = conv_output_size(h, k, stride, padding)
    wo = conv_output_size(w, k, stride, padding)
    if padding:
        x = np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    cols = np.empty((c, k, k, n, ho, wo), dtype=x.dtype)
    for ky in range(k):
        for kx in range(k):
            patch = x[:, :, ky : ky + stride * ho : stride, kx : kx + stride * wo : stride]
            cols[:, ky, kx] = patch.transpose(1, 0, 2, 3)
    return cols.reshape(c * k * k, n * ho * wo), (ho, wo)


def col2im(cols, x_shape, k, stride, padding):
    """Adjoint of :func:`im2col`: scatter-add columns back onto the input grid."""
    n, c, h, w = x_shape
    ho = conv_output_size(h, k, stride, padding)
    wo = conv_output_size(w, k, stride, padding)
    cols = cols.reshape(c, k, k, n, ho, wo)
    out = np.zeros((n, c, h + 2 * padding, w + 2 * padding), dtype=cols.dtype)
    for ky in range(k):
        for kx in range(k):
            out[:, :, ky : ky + stride * ho : stride, kx : kx + stride * wo : stride] += cols[
                :, ky, kx
            ].transpose(1, 0, 2, 3)
    if padding:
        out = out[:, :, padding:-padding, padding:-padding]
    return np.ascontiguousarray(out)


def conv2d(x, kernel, stride=1, padding=0, backend=None):
    """Cross-correlation (no kernel flip).

    ``x`` is (C_in, H, W) or batched (N, C_in, H, W); ``kernel`` is
    (C_out, C_in, k, k). Each output element sums over (c_in, ky, kx) in
    row-major order.
    """
    x = np.asarray(x)
    kernel = np.asarray(kernel)
    single = x.ndim == 3
    if single:
        x = x[None]
    if x.ndim != 4 or kernel.ndim != 4:
        raise DimensionError("conv2d expects (N,C,H,W) input and (O,C,k,k) kernel")
    c_out, c_in, k, k2 = kernel.shape
    if k != k2:
        raise DimensionError("only square kernels are supported")
    if x.shape[1] != c_in:
        raise DimensionError(f"input has {x.shape[1]} channels, kernel expects {c_in}")
    cols, (ho, wo) = im2col(x, k, stride, padding)
    out = matmul(kernel.reshape(c_out, -1), cols, backend=backend)
    out = out.reshape(c_out, x.shape[0], ho, wo).transpose(1, 0, 2, 3)
    out = np.ascontiguousarray(out)
    return out[0] if single else out


def avgpool2d(x, size):
    """Non-overlapping average pooling over the last two axes."""
    *lead, h, w = x.shape
    if h % size or w % size:
        raise DimensionError(f"pool size {size} does not divide {h}x{w}")
    y = x.reshape(*lead, h // size, size, w // size, size)
    return y.mean(axis=(-3, -1), dtype=x.dtype)


def vertex_sq_norms(dw, backend=None):
    """``||dw.T @ v||^2`` (float64) for all ``v`` in {0,1}^n, indexed by bitmask."""
    dw = np.ascontiguousarray(dw, dtype=np.float64)
    if dw.ndim != 2:
        raise DimensionError("expected a 2-d matrix")
    return get_kernels(backend).vertex_sq_norms(dw)
