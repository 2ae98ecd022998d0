"""Engine tests: oracle equivalence, exactness contracts, gradients."""

import numpy as np
import pytest

from fusionbank.errors import ContractError, DimensionError
from fusionbank.tensor import (
    ConvParams,
    Tensor,
    add,
    bilinear_resize,
    concat_channels,
    conv2d,
    global_pool,
    gradcheck,
    mul,
    sigmoid,
    slice_channels,
    tsum,
)

from oracles import bilinear_oracle, conv2d_oracle, global_pool_oracle


def conv_params(w, b, **kw):
    return ConvParams(Tensor(w, requires_grad=True), Tensor(b, requires_grad=True), **kw)


class TestConv2d:
    def test_scalar_kernel_scaling(self):
        x = Tensor(np.ones((1, 1, 3, 3)))
        p = conv_params(np.full((1, 1, 1, 1), 2.0), np.zeros(1))
        out = conv2d(x, p)
        assert out.shape == (1, 1, 3, 3)
        assert np.all(out.data == 2.0)

    def test_dirac_kernel_identity(self):
        rng = np.random.default_rng(0)
        x = rng.uniform(-1, 1, size=(1, 1, 3, 3))
        w = np.zeros((1, 1, 3, 3))
        w[0, 0, 1, 1] = 1.0
        out = conv2d(Tensor(x), conv_params(w, np.zeros(1), padding=1))
        np.testing.assert_array_equal(out.data, x)

    def test_dilation2_matches_six_loop_oracle(self):
        rng = np.random.default_rng(1)
        x = rng.standard_normal((1, 4, 8, 8))
        w = rng.standard_normal((6, 4, 3, 3))
        b = rng.standard_normal(6)
        out = conv2d(Tensor(x), conv_params(w, b, padding=2, dilation=2))
        want = conv2d_oracle(x, w, b, padding=2, dilation=2)
        np.testing.assert_allclose(out.data, want, rtol=0, atol=1e-12)

    @pytest.mark.parametrize("stride,padding,dilation,h",
                             [(1, 0, 1, 6), (1, 1, 1, 5), (2, 1, 1, 8), (1, 2, 2, 7),
                              (2, 2, 2, 9)])
    def test_random_shapes_match_oracle(self, stride, padding, dilation, h):
        rng = np.random.default_rng(stride * 100 + padding * 10 + dilation)
        x = rng.standard_normal((2, 3, h, h))
        w = rng.standard_normal((4, 3, 3, 3))
        b = rng.standard_normal(4)
        out = conv2d(Tensor(x), conv_params(w, b, stride=stride, padding=padding,
                                            dilation=dilation))
        want = conv2d_oracle(x, w, b, stride=stride, padding=padding, dilation=dilation)
        np.testing.assert_allclose(out.data, want, rtol=0, atol=1e-12)

    def test_channel_mismatch_names_axis(self):
        x = Tensor(np.zeros((1, 3, 4, 4)))
        p = conv_params(np.zeros((2, 4, 3, 3)), np.zeros(2), padding=1)
        with pytest.raises(DimensionError, match="channel"):
            conv2d(x, p)

    def test_kernel_larger_than_padded_input(self):
        x = Tensor(np.zeros((1, 1, 3, 3)))
        p = conv_params(np.zeros((1, 1, 3, 3)), np.zeros(1), dilation=2)
        with pytest.raises(DimensionError, match="height"):
            conv2d(x, p)


class TestBilinearResize:
    def test_constant_field_is_exact(self):
        x = Tensor(np.full((1, 2, 3, 5), 0.37))
        for oh, ow in [(1, 1), (4, 4), (7, 11), (3, 5)]:
            out = bilinear_resize(x, oh, ow)
            assert np.all(out.data == 0.37)

    def test_same_size_is_bit_identical(self):
        rng = np.random.default_rng(2)
        x = rng.standard_normal((2, 3, 6, 7))
        out = bilinear_resize(Tensor(x), 6, 7)
        np.testing.assert_array_equal(out.data, x)

    def test_2x2_to_4x4_matches_closed_form(self):
        x = np.array([[0.0, 1.0], [2.0, 3.0]]).reshape(1, 1, 2, 2)
        out = bilinear_resize(Tensor(x), 4, 4)
        want = bilinear_oracle(x, 4, 4)
        np.testing.assert_allclose(out.data, want, rtol=0, atol=1e-14)

    @pytest.mark.parametrize("shape,target", [((1, 2, 3, 4), (7, 9)),
                                              ((2, 1, 5, 5), (2, 3)),
                                              ((1, 3, 1, 6), (4, 2)),
                                              ((1, 1, 4, 4), (1, 7))])
    def test_random_resizes_match_oracle(self, shape, target):
        rng = np.random.default_rng(hash(target) % 1000)
        x = rng.standard_normal(shape)
        out = bilinear_resize(Tensor(x), *target)
        np.testing.assert_allclose(out.data, bilinear_oracle(x, *target),
                                   rtol=0, atol=1e-12)

    def test_bad_target_extents(self):
        with pytest.raises(DimensionError):
            bilinear_resize(Tensor(np.zeros((1, 1, 2, 2))), 0, 3)

    def test_adjoint_consistency(self):
        # <resize(x), y> == <x, resize^T(y)> certifies the backward operator
        rng = np.random.default_rng(3)
        x = Tensor(rng.standard_normal((1, 1, 3, 5)), requires_grad=True)
        y = rng.standard_normal((1, 1, 6, 4))
        out = bilinear_resize(x, 6, 4)
        loss = tsum(mul(out, Tensor(y)))
        loss.backward()
        lhs = float((out.data * y).sum())
        rhs = float((x.data * x.grad).sum())
        assert abs(lhs - rhs) < 1e-10


class TestElementwise:
    def test_sigmoid_at_zero(self):
        assert sigmoid(Tensor(np.zeros((2, 2)))).data[0, 0] == 0.5

    def test_gated_residual_arithmetic(self):
        ones = Tensor(np.ones((1, 2, 3, 3)))
        half = Tensor(np.full((1, 2, 3, 3), 0.5))
        out = add(mul(ones, half), ones)
        assert np.all(out.data == 1.5)

    def test_concat_roundtrip(self):
        rng = np.random.default_rng(4)
        a = rng.standard_normal((2, 3, 4, 4))
        b = rng.standard_normal((2, 5, 4, 4))
        cat = concat_channels([Tensor(a), Tensor(b)])
        assert cat.shape == (2, 8, 4, 4)
        np.testing.assert_array_equal(slice_channels(cat, 0, 3).data, a)
        np.testing.assert_array_equal(slice_channels(cat, 3, 8).data, b)

    def test_shape_mismatch_raises(self):
        with pytest.raises(DimensionError, match="axis"):
            add(Tensor(np.zeros((1, 2))), Tensor(np.zeros((1, 3))))
        with pytest.raises(DimensionError):
            concat_channels([Tensor(np.zeros((1, 2, 3, 3))), Tensor(np.zeros((1, 2, 4, 3)))])

    def test_sigmoid_strictly_inside_unit_interval(self):
        x = np.array([-1e9, -50.0, -1.0, 0.0, 1.0, 50.0, 1e9])
        s = sigmoid(Tensor(x)).data
        assert np.all(s > 0.0) and np.all(s < 1.0)


class TestGlobalPool:
    def test_constant_input(self):
        x = Tensor(np.full((2, 3, 4, 5), 1.7))
        for kind in ("avg", "max"):
            out = global_pool(x, kind)
            assert out.shape == (2, 3, 1, 1)
            np.testing.assert_allclose(out.data, 1.7)

    def test_small_example(self):
        x = Tensor(np.array([[1.0, 2.0], [3.0, 4.0]]).reshape(1, 1, 2, 2))
        assert global_pool(x, "avg").data.reshape(()) == 2.5
        assert global_pool(x, "max").data.reshape(()) == 4.0

    def test_random_matches_loop_oracle(self):
        rng = np.random.default_rng(5)
        x = rng.standard_normal((2, 4, 5, 6))
        for kind in ("avg", "max"):
            np.testing.assert_allclose(global_pool(Tensor(x), kind).data,
                                       global_pool_oracle(x, kind), atol=1e-13)

    def test_max_tie_routes_to_first_occurrence(self):
        x = np.zeros((1, 1, 2, 3))
        x[0, 0, 0, 1] = 5.0
        x[0, 0, 1, 2] = 5.0  # same max later in row-major order
        t = Tensor(x, requires_grad=True)
        tsum(global_pool(t, "max")).backward()
        want = np.zeros_like(x)
        want[0, 0, 0, 1] = 1.0
        np.testing.assert_array_equal(t.grad, want)

    def test_bad_kind(self):
        with pytest.raises(ContractError):
            global_pool(Tensor(np.zeros((1, 1, 2, 2))), "median")


class TestGradcheck:
    def test_sigmoid_sum(self):
        rng = np.random.default_rng(6)
        x = Tensor(rng.standard_normal((3, 4)), requires_grad=True)
        assert gradcheck(lambda: tsum(sigmoid(x)), [x]) < 1e-5

    def test_conv_dilation2_sum(self):
        rng = np.random.default_rng(7)
        x = Tensor(rng.standard_normal((1, 2, 6, 6)), requires_grad=True)
        w = Tensor(rng.standard_normal((3, 2, 3, 3)), requires_grad=True)
        b = Tensor(rng.standard_normal(3), requires_grad=True)
        fn = lambda: tsum(conv2d(x, ConvParams(w, b, padding=2, dilation=2)))
        assert gradcheck(fn, [x, w, b]) < 1e-5

    def test_constant_output_gives_zero_both_ways(self):
        x = Tensor(np.ones((2, 2)), requires_grad=True)
        const = Tensor(np.ones(()))
        assert gradcheck(lambda: tsum(mul(const, const)), [x]) == 0.0

    def test_rejects_non_scalar(self):
        x = Tensor(np.ones((2, 2)), requires_grad=True)
        with pytest.raises(ContractError):
            gradcheck(lambda: sigmoid(x), [x])

    def test_shared_leaf_diamond(self):
        # y = relu-free diamond: intermediate consumed twice
        rng = np.random.default_rng(8)
        x = Tensor(rng.standard_normal((3, 3)), requires_grad=True)

        def fn():
            a = mul(x, x)
            return tsum(add(mul(a, x), a))

        assert gradcheck(fn, [x]) < 1e-6


class TestBackwardAccumulation:
    def test_grad_not_aliased_between_tensors(self):
        x = Tensor(np.ones((2, 2)), requires_grad=True)
        y = Tensor(np.ones((2, 2)), requires_grad=True)
        z = add(x, y)
        out = tsum(add(z, x))  # x also consumed directly
        out.backward()
        np.testing.assert_array_equal(y.grad, np.ones((2, 2)))
        np.testing.assert_array_equal(x.grad, 2 * np.ones((2, 2)))
