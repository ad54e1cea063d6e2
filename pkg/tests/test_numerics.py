import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from slamp import numerics
from slamp.numerics import DimensionError, NonFiniteError


def triple_loop(a, b):
    m, k = a.shape
    n = b.shape[1]
    out = np.zeros((m, n), dtype=np.float32)
    for i in range(m):
        for j in range(n):
            acc = np.float32(0)
            for p in range(k):
                acc = np.float32(acc + np.float32(a[i, p] * b[p, j]))
            out[i, j] = acc
    return out


def nested_conv(x, w, stride, pad):
    c_in, h, wd = x.shape
    c_out, _, k, _ = w.shape
    xp = np.pad(x, ((0, 0), (pad, pad), (pad, pad)))
    ho = (h + 2 * pad - k) // stride + 1
    wo = (wd + 2 * pad - k) // stride + 1
    out = np.zeros((c_out, ho, wo), dtype=np.float32)
    for o in range(c_out):
        for y in range(ho):
            for z in range(wo):
                acc = np.float32(0)
                for c in range(c_in):
                    for ky in range(k):
                        for kx in range(k):
                            prod = np.float32(w[o, c, ky, kx] * xp[c, y * stride + ky, z * stride + kx])
                            acc = np.float32(acc + prod)
                out[o, y, z] = acc
    return out


class TestMatmul:
    def test_identity(self, backend):
        out = numerics.matmul([[1, 0], [0, 1]], [[3], [4]], backend=backend)
        assert out.tolist() == [[3], [4]]

    def test_direct(self, backend):
        out = numerics.matmul([[1, 2], [3, 4]], [[1], [1]], backend=backend)
        assert out.tolist() == [[3], [7]]
        assert out.dtype == np.float32

    def test_matches_triple_loop_exactly(self, rng, backend):
        a = numerics.rng_uniform(rng, (5, 4), -1, 1)
        b = numerics.rng_uniform(rng, (4, 3), -1, 1)
        np.testing.assert_array_equal(numerics.matmul(a, b, backend=backend), triple_loop(a, b))

    @pytest.mark.parametrize("dtype", [np.float32, np.float64])
    def test_backends_bit_identical(self, rng, dtype):
        a = rng.normal(size=(37, 61)).astype(dtype)
        a[a < 0] = 0
        b = rng.normal(size=(61, 29)).astype(dtype)
        outs = [numerics.matmul(a, b, backend=be) for be in numerics.available_backends()]
        for o in outs[1:]:
            np.testing.assert_array_equal(o, outs[0])
        assert outs[0].dtype == dtype

    def test_shape_mismatch(self, backend):
        with pytest.raises(DimensionError):
            numerics.matmul(np.ones((2, 3)), np.ones((2, 3)), backend=backend)

    def test_non_finite_rejected(self):
        with pytest.raises(NonFiniteError):
            numerics.matmul([[np.inf]], [[1.0]])

    def test_zero_times_inf_rejected(self, backend):
        with pytest.raises(NonFiniteError):
            numerics.matmul([[0.0, 1.0]], [[np.inf], [1.0]], backend=backend)

    def test_read_only_operands(self, rng, backend):
        a = numerics.rng_uniform(rng, (3, 4))
        b = numerics.rng_uniform(rng, (4, 2))
        a.flags.writeable = False
        b.flags.writeable = False
        np.testing.assert_array_equal(numerics.matmul(a, b, backend=backend), triple_loop(a, b))

    @settings(max_examples=30, deadline=None)
    @given(arrays(np.float32, st.tuples(st.integers(1, 6), st.integers(1, 6)), elements=st.floats(-100, 100, width=32)))
    def test_identity_left(self, a):
        eye = np.eye(a.shape[0], dtype=np.float32)
        np.testing.assert_array_equal(numerics.matmul(eye, a), a)

    def test_inputs_not_mutated(self, rng):
        a = numerics.rng_uniform(rng, (4, 4))
        b = numerics.rng_uniform(rng, (4, 4))
        a0, b0 = a.copy(), b.copy()
        numerics.matmul(a, b)
        numerics.conv2d(a[None], b[None, None, :2, :2])
        np.testing.assert_array_equal(a, a0)
        np.testing.assert_array_equal(b, b0)


class TestElementwise:
    def test_mask(self):
        assert numerics.elementwise("mul", np.array([1, 2, 3.0]), np.array([0, 1, 0.0])).tolist() == [0, 2, 0]

    def test_square(self):
        assert numerics.elementwise("square", np.array([-2.0, 3.0])).tolist() == [4, 9]

    def test_add_matches_scalar_loop(self, rng):
        a = numerics.rng_uniform(rng, (7, 3), -5, 5)
        b = numerics.rng_uniform(rng, (7, 3), -5, 5)
        ref = np.empty_like(a)
        for i in range(7):
            for j in range(3):
                ref[i, j] = np.float32(a[i, j] + b[i, j])
        np.testing.assert_array_equal(numerics.elementwise("add", a, b), ref)

    def test_shape_mismatch(self):
        with pytest.raises(DimensionError):
            numerics.elementwise("sub", np.ones(3), np.ones(4))

    def test_unknown_op(self):
        with pytest.raises(ValueError):
            numerics.elementwise("pow", np.ones(3), np.ones(3))


class TestConv2d:
    def test_scalar_kernel(self, backend):
        out = numerics.conv2d(np.ones((1, 3, 3), np.float32), np.full((1, 1, 1, 1), 2, np.float32), backend=backend)
        np.testing.assert_array_equal(out, np.full((1, 3, 3), 2, np.float32))

    def test_zero_kernel(self, rng):
        x = numerics.rng_uniform(rng, (2, 6, 6))
        assert not numerics.conv2d(x, np.zeros((3, 2, 3, 3), np.float32), padding=1).any()

    @pytest.mark.parametrize("stride,pad", [(1, 0), (1, 1), (2, 1)])
    def test_matches_nested_loops(self, rng, backend, stride, pad):
        x = numerics.rng_uniform(rng, (2, 5, 5), -1, 1)
        w = numerics.rng_uniform(rng, (3, 2, 3, 3), -1, 1)
        out = numerics.conv2d(x, w, stride, pad, backend=backend)
        np.testing.assert_array_equal(out, nested_conv(x, w, stride, pad))

    def test_batched(self, rng):
        x = numerics.rng_uniform(rng, (4, 2, 5, 5))
        w = numerics.rng_uniform(rng, (3, 2, 3, 3), -1, 1)
        out = numerics.conv2d(x, w, 1, 1)
        for i in range(4):
            np.testing.assert_array_equal(out[i], numerics.conv2d(x[i], w, 1, 1))

    @settings(max_examples=20, deadline=None)
    @given(st.floats(-4, 4, width=32), st.integers(0, 2**32 - 1))
    def test_one_by_one_kernel_scales(self, c, seed):
        x = numerics.rng_uniform(numerics.make_rng(seed), (2, 4, 4), -1, 1)
        w = np.zeros((2, 2, 1, 1), np.float32)
        w[0, 0] = w[1, 1] = c
        np.testing.assert_array_equal(numerics.conv2d(x, w), np.float32(c) * x)

    def test_kernel_too_large(self):
        with pytest.raises(DimensionError):
            numerics.conv2d(np.ones((1, 2, 2), np.float32), np.ones((1, 1, 3, 3), np.float32))

    def test_col2im_is_adjoint(self, rng):
        x = rng.normal(size=(2, 3, 6, 6))
        cols, _ = numerics.im2col(x, 3, 2, 1)
        y = rng.normal(size=cols.shape)
        lhs = np.sum(cols * y)
        rhs = np.sum(x * numerics.col2im(y, x.shape, 3, 2, 1))
        assert lhs == pytest.approx(rhs, rel=1e-12)


class TestRng:
    def test_bernoulli_degenerate(self, rng):
        assert not numerics.rng_bernoulli(rng, 0.0, (50,)).any()
        assert numerics.rng_bernoulli(rng, 1.0, (50,)).all()

    def test_bernoulli_binary(self, rng):
        s = numerics.rng_bernoulli(rng, 0.3, (1000,))
        assert set(np.unique(s)) <= {0.0, 1.0}

    def test_bernoulli_range(self, rng):
        with pytest.raises(ValueError):
            numerics.rng_bernoulli(rng, 1.5, (3,))

    def test_uniform_deterministic(self):
        a = numerics.rng_uniform(numerics.make_rng(7), (10, 10))
        b = numerics.rng_uniform(numerics.make_rng(7), (10, 10))
        assert a.tobytes() == b.tobytes()

    def test_derived_streams_independent(self):
        a = numerics.derive_rng(3, "train").random(5)
        b = numerics.derive_rng(3, "init").random(5)
        c = numerics.derive_rng(3, "train").random(5)
        assert not np.array_equal(a, b)
        np.testing.assert_array_equal(a, c)

    def test_seed_range(self):
        with pytest.raises(ValueError):
            numerics.make_rng(-1)


def test_vertex_norms_backends_agree(rng):
    dw = rng.normal(size=(9, 4))
    outs = [numerics.vertex_sq_norms(dw, backend=be) for be in numerics.available_backends()]
    for o in outs:
        np.testing.assert_array_equal(o, outs[0])
    # direct sum of the selected rows, ascending, then squared norm
    for v in range(1 << 9):
        acc = np.zeros(4)
        for i in range(9):
            if v >> i & 1:
                acc = acc + dw[i]
        tot = 0.0
        for x in acc:
            tot = tot + x * x
        assert outs[0][v] == tot


def test_use_backend_restores(rng):
    before = numerics.get_kernels()
    with numerics.use_backend("python"):
        assert numerics.get_kernels() is numerics.get_kernels("python")
    assert numerics.get_kernels() is before
