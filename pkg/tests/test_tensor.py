import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from motionedit.gradcheck import gradcheck
from motionedit.layers import make_rng
from motionedit.tensor import (
    ConfigurationError,
    ContractError,
    DimensionError,
    NaNError,
    Parameter,
    Tensor,
    backward,
    concat,
    conv2d,
    group_norm,
    layer_norm,
    linear,
    matmul,
    precision,
    silu,
    softmax_lastdim,
    take,
    upsample_nearest2d,
)


def rand(rng, *shape, requires_grad=True):
    return Tensor(rng.uniform(-1, 1, size=shape), requires_grad=requires_grad)


@pytest.fixture
def rng():
    return make_rng(7)


@pytest.fixture(autouse=True)
def f64():
    # finite differences with h=1e-3 need double precision to resolve 1e-3 relative error
    with precision(np.float64):
        yield


def weighted_sum(out, rng):
    w = Tensor(rng.standard_normal(out.shape))
    return (out * w).sum()


class TestMatmul:
    def test_identity(self, rng):
        a = rand(rng, 3, 3)
        np.testing.assert_array_equal(matmul(Tensor(np.eye(3)), a).data, a.data)

    def test_hand_arithmetic(self):
        out = matmul(Tensor([[1.0, 2.0], [3.0, 4.0]]), Tensor([[1.0], [1.0]]))
        np.testing.assert_array_equal(out.data, [[3.0], [7.0]])

    def test_gradcheck_sum(self, rng):
        a, b = rand(rng, 4, 5), rand(rng, 5, 6)
        res = gradcheck(lambda: matmul(a, b).sum(), [a, b])
        assert res.max_rel_error < 1e-3

    def test_batched_broadcast_gradcheck(self, rng):
        a, b = rand(rng, 2, 3, 4), rand(rng, 4, 2)
        w = rng.standard_normal((2, 3, 2))
        res = gradcheck(lambda: (matmul(a, b) * Tensor(w)).sum(), [a, b])
        assert res.max_rel_error < 1e-3

    def test_shape_error_names_both(self, rng):
        with pytest.raises(DimensionError, match=r"\(2, 3\).*\(4, 5\)"):
            matmul(rand(rng, 2, 3), rand(rng, 4, 5))


class TestSoftmax:
    def test_uniform(self):
        np.testing.assert_allclose(softmax_lastdim(Tensor([0.0, 0.0, 0.0])).data, [1 / 3] * 3, atol=1e-12)

    def test_no_overflow(self):
        with precision(np.float32):
            out = softmax_lastdim(Tensor([1000.0, 0.0])).data
        assert np.all(np.isfinite(out))
        np.testing.assert_allclose(out, [1.0, 0.0], atol=1e-6)

    def test_gradcheck(self, rng):
        x = rand(rng, 7)
        out = softmax_lastdim(x)
        assert abs(out.data.sum() - 1.0) < 1e-6
        w = Tensor(rng.standard_normal(7))
        assert gradcheck(lambda: (softmax_lastdim(x) * w).sum(), [x]).max_rel_error < 1e-3

    def test_nan_rejected(self):
        with pytest.raises(NaNError):
            softmax_lastdim(Tensor([np.nan, 1.0]))

    @settings(max_examples=50, deadline=None)
    @given(st.lists(st.floats(-1e4, 1e4), min_size=1, max_size=12))
    def test_rows_sum_to_one_float32(self, values):
        with precision(np.float32):
            out = softmax_lastdim(Tensor(values)).data
        assert out.min() >= 0
        assert abs(float(out.sum(dtype=np.float64)) - 1.0) < 1e-6


class TestConv2d:
    def test_pointwise_identity(self, rng):
        x = rand(rng, 2, 3, 5, 5)
        w = Tensor(np.eye(3).reshape(3, 3, 1, 1))
        np.testing.assert_allclose(conv2d(x, w).data, x.data)

    def test_all_ones_kernel_on_constant(self):
        x = Tensor(np.full((1, 1, 6, 6), 2.5))
        out = conv2d(x, Tensor(np.ones((1, 1, 3, 3))), padding=1).data
        np.testing.assert_allclose(out[0, 0, 1:-1, 1:-1], 9 * 2.5)
        assert out[0, 0, 0, 0] == pytest.approx(4 * 2.5)

    def test_matches_direct_loops(self, rng):
        x, w, b = rand(rng, 1, 2, 6, 5), rand(rng, 3, 2, 3, 3), rand(rng, 3)
        out = conv2d(x, w, b, stride=2, padding=1).data
        xp = np.pad(x.data, ((0, 0), (0, 0), (1, 1), (1, 1)))
        for o in range(3):
            for i in range(out.shape[2]):
                for j in range(out.shape[3]):
                    patch = xp[0, :, 2 * i:2 * i + 3, 2 * j:2 * j + 3]
                    assert out[0, o, i, j] == pytest.approx((patch * w.data[o]).sum() + b.data[o])

    @pytest.mark.parametrize("stride", [1, 2])
    def test_gradcheck(self, rng, stride):
        x, w, b = rand(rng, 2, 3, 8, 8), rand(rng, 4, 3, 3, 3), rand(rng, 4)
        wt = Tensor(rng.standard_normal(conv2d(x, w, b, stride, 1).shape))
        res = gradcheck(lambda: (conv2d(x, w, b, stride, 1) * wt).sum(), [x, w, b])
        assert res.max_rel_error < 1e-3, res.worst

    def test_channel_mismatch(self, rng):
        with pytest.raises(DimensionError):
            conv2d(rand(rng, 1, 2, 4, 4), rand(rng, 1, 3, 3, 3))


class TestGroupNorm:
    def test_constant_input_is_zero(self):
        out = group_norm(Tensor(np.full((2, 4, 3, 3), 5.0)), 2)
        np.testing.assert_array_equal(out.data, 0.0)

    def test_unit_statistics(self, rng):
        out = group_norm(rand(rng, 1, 6, 5, 5), 1, Tensor(np.ones(6)), Tensor(np.zeros(6))).data
        assert abs(out.mean()) < 1e-5
        assert abs(out.var() - 1.0) < 1e-3

    def test_gradcheck(self, rng):
        x, g, b = rand(rng, 2, 4, 3, 3), rand(rng, 4), rand(rng, 4)
        wt = Tensor(rng.standard_normal((2, 4, 3, 3)))
        assert gradcheck(lambda: (group_norm(x, 2, g, b) * wt).sum(), [x, g, b]).max_rel_error < 1e-3

    def test_layer_norm_gradcheck(self, rng):
        x, g, b = rand(rng, 3, 4, 6), rand(rng, 6), rand(rng, 6)
        wt = Tensor(rng.standard_normal((3, 4, 6)))
        assert gradcheck(lambda: (layer_norm(x, g, b) * wt).sum(), [x, g, b]).max_rel_error < 1e-3

    def test_indivisible_channels(self, rng):
        with pytest.raises(ConfigurationError):
            group_norm(rand(rng, 1, 5, 2, 2), 2)


class TestLinearSilu:
    def test_identity(self, rng):
        x = rand(rng, 4, 3)
        out = linear(x, Tensor(np.eye(3)), Tensor(np.zeros(3)))
        np.testing.assert_array_equal(out.data, x.data)

    def test_silu_zero(self):
        assert silu(Tensor([0.0])).data[0] == 0.0

    def test_gradchecks(self, rng):
        x, w, b = rand(rng, 5, 4), rand(rng, 4, 3), rand(rng, 3)
        wt = Tensor(rng.standard_normal((5, 3)))
        assert gradcheck(lambda: (silu(linear(x, w, b)) * wt).sum(), [x, w, b]).max_rel_error < 1e-3

    def test_shape_mismatch(self, rng):
        with pytest.raises(DimensionError):
            linear(rand(rng, 2, 3), rand(rng, 4, 2))


class TestShapeOps:
    def test_concat_take_upsample_gradcheck(self, rng):
        a, b = rand(rng, 2, 3, 2, 2), rand(rng, 2, 1, 2, 2)
        wt = Tensor(rng.standard_normal((3, 4, 4, 4)))

        def f():
            c = concat([a, b], axis=1)
            return (upsample_nearest2d(take(c, [0, 1, 1], axis=0)) * wt).sum()

        assert gradcheck(f, [a, b]).max_rel_error < 1e-3

    def test_elementwise_gradcheck(self, rng):
        a, b = rand(rng, 3, 4), Tensor(rng.uniform(0.5, 1.5, (1, 4)), requires_grad=True)

        def f():
            y = (a * b - a / b + (a ** 2.0) * 0.5).exp() + (b.sqrt() + b.log())
            return (y.mean(axis=1) * Tensor([1.0, -2.0, 0.5])).sum() + a.transpose(1, 0)[1:3].sum()

        assert gradcheck(f, [a, b]).max_rel_error < 1e-3


class TestBackward:
    def test_sum_gives_ones(self, rng):
        p = Parameter(rng.standard_normal((3, 2)), "conv")
        backward(p.sum())
        np.testing.assert_array_equal(p.grad, np.ones((3, 2)))

    def test_half_square(self, rng):
        p = Parameter(rng.standard_normal(5), "conv")
        backward((p * p).sum() * 0.5)
        np.testing.assert_allclose(p.grad, p.data)

    def test_accumulates(self, rng):
        p = Parameter(rng.standard_normal(4), "conv")
        backward(p.sum())
        backward(p.sum())
        np.testing.assert_array_equal(p.grad, 2.0)

    def test_non_scalar_rejected(self, rng):
        with pytest.raises(ContractError):
            backward(rand(rng, 2, 2) * 2.0)

    def test_mlp_gradcheck(self, rng):
        x = Tensor(rng.standard_normal((6, 4)))
        w1, b1 = Parameter(rng.standard_normal((4, 8)) * 0.5, "conv"), Parameter(rng.standard_normal(8) * 0.1, "conv")
        w2, b2 = Parameter(rng.standard_normal((8, 3)) * 0.5, "conv"), Parameter(rng.standard_normal(3) * 0.1, "conv")
        y = Tensor(rng.standard_normal((6, 3)))

        def loss():
            d = linear(silu(linear(x, w1, b1)), w2, b2) - y
            return (d * d).mean()

        assert gradcheck(loss, [w1, b1, w2, b2]).max_rel_error < 1e-3

    def test_grad_shapes_and_tape_release(self, rng):
        a, b = rand(rng, 3, 4), rand(rng, 4, 2)
        mid = matmul(a, b)
        out = silu(mid).sum()
        backward(out)
        assert a.grad.shape == a.shape and b.grad.shape == b.shape and mid.grad.shape == mid.shape
        assert out._parents == () and mid._parents == ()

    def test_deterministic(self):
        grads = []
        for _ in range(2):
            r = make_rng(3)
            a, b = rand(r, 5, 6), rand(r, 6, 4)
            backward(softmax_lastdim(matmul(a, b)).sum() + (a * a).sum())
            grads.append((a.grad.copy(), b.grad.copy()))
        assert grads[0][0].tobytes() == grads[1][0].tobytes()
        assert grads[0][1].tobytes() == grads[1][1].tobytes()

    def test_default_dtype_is_float32(self):
        with precision(np.float32):
            assert Tensor([1.0, 2.0]).dtype == np.float32

    def test_unknown_group(self):
        with pytest.raises(ConfigurationError):
            Parameter(np.zeros(2), "bogus")
