"""Layer forward values and finite-difference gradient verification."""

import numpy as np
import pytest

from specblend import nn
from tests.support.oracles import central_diff, max_rel_err

FD_TOL = 1e-4
FD_H = 1e-4


def fd_check_layer(layer, x, seed=0, train=True):
    """Compare analytic input/parameter gradients with central
    differences of a fixed random projection of the output."""
    rng = np.random.default_rng(seed)
    y = layer.forward(x, train=train)
    proj = rng.standard_normal(y.shape)

    def loss_of_input(xv):
        return float(np.sum(layer.forward(xv, train=train) * proj))

    layer.zero_grads()
    layer.forward(x, train=train)
    dx = layer.backward(proj)
    assert max_rel_err(dx, central_diff(loss_of_input, x.copy(), FD_H)) <= FD_TOL

    for name in layer.params:
        original = layer.params[name].copy()

        def loss_of_param(p, _name=name):
            layer.params[_name][...] = p
            val = float(np.sum(layer.forward(x, train=train) * proj))
            layer.params[_name][...] = original
            return val

        num = central_diff(loss_of_param, original.copy(), FD_H)
        assert max_rel_err(layer.grads[name], num) <= FD_TOL, name


class TestConv:
    def test_table_shape_row(self):
        rng = np.random.default_rng(0)
        layer = nn.Conv(36, 36, 64, stride=1, rng=rng)
        x = rng.standard_normal((2, 1, 400, 36))
        assert layer.forward(x).shape == (2, 1, 400, 36)

    def test_identity_kernel(self):
        layer = nn.Conv(3, 3, 1, rng=np.random.default_rng(1))
        layer.params["kernel"][...] = np.eye(3)[np.newaxis]
        layer.params["bias"][...] = 0.0
        x = np.random.default_rng(2).standard_normal((2, 1, 7, 3))
        np.testing.assert_allclose(layer.forward(x), x, atol=1e-15)

    def test_zero_kernel_zero_output(self):
        layer = nn.Conv(3, 4, 5, rng=np.random.default_rng(3))
        layer.params["kernel"][...] = 0.0
        x = np.random.default_rng(4).standard_normal((2, 1, 9, 3))
        assert np.all(layer.forward(x) == 0.0)

    def test_strided_output_width(self):
        layer = nn.Conv(2, 2, 3, stride=4, rng=np.random.default_rng(5))
        assert layer.forward(np.zeros((1, 1, 400, 2))).shape == (1, 1, 100, 2)

    def test_channel_mismatch_rejected(self):
        layer = nn.Conv(3, 4, 5, rng=np.random.default_rng(6))
        with pytest.raises(ValueError, match="channels"):
            layer.forward(np.zeros((1, 1, 9, 5)))

    @pytest.mark.parametrize("stride,kw,width", [(1, 3, 8), (2, 4, 8), (3, 5, 7)])
    def test_gradients(self, stride, kw, width):
        rng = np.random.default_rng(stride * 31 + kw)
        layer = nn.Conv(4, 3, kw, stride=stride, rng=rng)
        fd_check_layer(layer, rng.standard_normal((3, 1, width, 4)), seed=kw)


class TestConvTranspose:
    def test_upsampling_shapes(self):
        rng = np.random.default_rng(7)
        up = nn.ConvTranspose(18, 18, 64, stride=4, rng=rng)
        assert up.forward(np.zeros((2, 1, 25, 18))).shape == (2, 1, 100, 18)
        up2 = nn.ConvTranspose(18, 36, 32, stride=4, rng=rng)
        assert up2.forward(np.zeros((2, 1, 100, 18))).shape == (2, 1, 400, 36)

    def test_stride_one_identity_kernel(self):
        layer = nn.ConvTranspose(3, 3, 1, stride=1, rng=np.random.default_rng(8))
        layer.params["kernel"][...] = np.eye(3)[np.newaxis]
        x = np.random.default_rng(9).standard_normal((2, 1, 6, 3))
        np.testing.assert_allclose(layer.forward(x), x, atol=1e-15)

    def test_adjoint_of_conv(self):
        """<conv(x), y> == <x, conv_transpose(y)> with shared kernels."""
        rng = np.random.default_rng(10)
        for stride, kw in ((1, 3), (2, 4), (4, 6)):
            conv = nn.Conv(3, 5, kw, stride=stride, rng=rng)
            convt = nn.ConvTranspose(5, 3, kw, stride=stride, rng=rng)
            convt.params["kernel"] = conv.params["kernel"]
            conv.params["bias"][...] = 0.0
            convt.params["bias"][...] = 0.0
            w_small = 6
            x = rng.standard_normal((2, 1, w_small * stride, 3))
            y = rng.standard_normal((2, 1, w_small, 5))
            lhs = float(np.sum(conv.forward(x) * y))
            rhs = float(np.sum(x * convt.forward(y)))
            assert abs(lhs - rhs) <= 1e-9 * max(abs(lhs), abs(rhs), 1.0)

    @pytest.mark.parametrize("stride,kw", [(1, 3), (2, 4), (3, 5)])
    def test_gradients(self, stride, kw):
        rng = np.random.default_rng(stride * 17 + kw)
        layer = nn.ConvTranspose(3, 4, kw, stride=stride, rng=rng)
        fd_check_layer(layer, rng.standard_normal((2, 1, 5, 3)), seed=stride)


class TestBatchNorm:
    def test_standardizes_in_train_mode(self):
        layer = nn.BatchNorm(3)
        x = np.random.default_rng(11).standard_normal((8, 1, 10, 3)) * 4 + 2
        y = layer.forward(x, train=True)
        np.testing.assert_allclose(y.mean(axis=(0, 1, 2)), 0.0, atol=1e-12)
        # eps shrinks the variance slightly below 1
        np.testing.assert_allclose(y.var(axis=(0, 1, 2)), 1.0, atol=1e-3)

    def test_infer_with_running_equal_batch_matches_train(self):
        layer = nn.BatchNorm(2)
        x = np.random.default_rng(12).standard_normal((6, 1, 5, 2)) * 3 - 1
        y_train = layer.forward(x, train=True)
        layer.running_mean = x.mean(axis=(0, 1, 2))
        layer.running_var = x.var(axis=(0, 1, 2))
        y_infer = layer.forward(x, train=False)
        np.testing.assert_allclose(y_infer, y_train, atol=1e-6)

    def test_gamma_beta_scale_shift(self):
        layer = nn.BatchNorm(2)
        layer.params["gamma"][...] = 2.0
        layer.params["beta"][...] = 3.0
        x = np.random.default_rng(13).standard_normal((16, 1, 8, 2))
        y = layer.forward(x, train=True)
        np.testing.assert_allclose(y.mean(axis=(0, 1, 2)), 3.0, atol=1e-12)
        np.testing.assert_allclose(y.std(axis=(0, 1, 2)), 2.0, atol=2e-3)

    def test_batch_of_one_rejected(self):
        layer = nn.BatchNorm(2)
        with pytest.raises(ValueError, match="batch >= 2"):
            layer.forward(np.zeros((1, 1, 4, 2)), train=True)

    def test_running_variance_nonnegative(self):
        layer = nn.BatchNorm(2)
        x = np.random.default_rng(14).standard_normal((4, 1, 6, 2))
        for _ in range(5):
            layer.forward(x, train=True)
        assert np.all(layer.running_var >= 0.0)

    @pytest.mark.parametrize("seed", [0, 1])
    def test_gradients_through_batch_stats(self, seed):
        rng = np.random.default_rng(20 + seed)
        layer = nn.BatchNorm(3)
        layer.params["gamma"][...] = rng.uniform(0.5, 1.5, 3)
        layer.params["beta"][...] = rng.standard_normal(3)
        fd_check_layer(layer, rng.standard_normal((4, 1, 6, 3)), seed=seed)


class TestElu:
    def test_values(self):
        np.testing.assert_allclose(
            nn.elu(np.array([0.0, 2.0, -np.log(2.0)])), [0.0, 2.0, -0.5], atol=1e-15
        )

    def test_backward_at_two(self):
        layer = nn.Elu()
        layer.forward(np.full((1, 1, 1, 1), 2.0))
        assert layer.backward(np.ones((1, 1, 1, 1)))[0, 0, 0, 0] == 1.0

    def test_gradients(self):
        rng = np.random.default_rng(30)
        fd_check_layer(nn.Elu(), rng.standard_normal((3, 1, 5, 2)), seed=3)


class TestAvgPool:
    def test_basic_mean(self):
        layer = nn.AvgPool(4)
        x = np.array([1.0, 2.0, 3.0, 4.0]).reshape(1, 1, 4, 1)
        assert layer.forward(x)[0, 0, 0, 0] == 2.5

    def test_constant_preserved(self):
        layer = nn.AvgPool(5)
        y = layer.forward(np.full((2, 1, 10, 3), 7.0))
        np.testing.assert_array_equal(y, np.full((2, 1, 2, 3), 7.0))

    def test_table_shapes(self):
        assert nn.AvgPool(4).forward(np.zeros((2, 1, 400, 36))).shape == (2, 1, 100, 36)
        assert nn.AvgPool(4).forward(np.zeros((2, 1, 100, 18))).shape == (2, 1, 25, 18)

    def test_non_divisible_width_rejected(self):
        with pytest.raises(ValueError, match="divisible"):
            nn.AvgPool(3).forward(np.zeros((1, 1, 8, 1)))

    def test_backward_distributes_uniformly(self):
        layer = nn.AvgPool(4)
        layer.forward(np.zeros((1, 1, 8, 1)))
        dx = layer.backward(np.array([1.0, 2.0]).reshape(1, 1, 2, 1))
        np.testing.assert_allclose(dx.ravel(), [0.25] * 4 + [0.5] * 4)

    def test_gradients(self):
        rng = np.random.default_rng(40)
        fd_check_layer(nn.AvgPool(2), rng.standard_normal((2, 1, 8, 3)), seed=4)


class TestDense:
    def test_identity(self):
        layer = nn.Dense(4, 4, rng=np.random.default_rng(50))
        layer.params["weight"][...] = np.eye(4)
        layer.params["bias"][...] = 0.0
        x = np.random.default_rng(51).standard_normal((3, 4))
        np.testing.assert_allclose(layer.forward(x), x, atol=1e-15)

    def test_gradients(self):
        rng = np.random.default_rng(52)
        fd_check_layer(nn.Dense(5, 4, rng=rng), rng.standard_normal((6, 5)), seed=5)


class TestSoftmax:
    def test_symmetry(self):
        np.testing.assert_allclose(nn.softmax(np.zeros(2)), [0.5, 0.5], atol=1e-15)

    def test_log3_case(self):
        np.testing.assert_allclose(
            nn.softmax(np.array([np.log(3.0), 0.0])), [0.75, 0.25], atol=1e-12
        )

    def test_rows_sum_to_one(self):
        rng = np.random.default_rng(60)
        p = nn.softmax(rng.standard_normal((40, 5)) * 5)
        np.testing.assert_allclose(p.sum(axis=1), 1.0, atol=1e-12)
        assert np.all(p > 0.0) and np.all(p < 1.0)

    def test_stable_under_large_inputs(self):
        p = nn.softmax(np.array([1000.0, 1000.0]))
        np.testing.assert_allclose(p, [0.5, 0.5], atol=1e-12)


class TestPlumbing:
    def test_backward_before_forward_raises(self):
        layer = nn.Conv(2, 2, 3, rng=np.random.default_rng(70))
        with pytest.raises(RuntimeError, match="before forward"):
            layer.backward(np.zeros((1, 1, 4, 2)))

    def test_glorot_bounds(self):
        rng = np.random.default_rng(71)
        w = nn.glorot_uniform(rng, (100, 100), 100, 100)
        limit = np.sqrt(6.0 / 200)
        assert np.abs(w).max() <= limit
        assert np.abs(w).max() >= 0.9 * limit  # actually fills the range

    def test_sequential_chains(self):
        rng = np.random.default_rng(72)
        seq = nn.Sequential([
            nn.Conv(2, 3, 3, rng=rng), nn.Elu(), nn.AvgPool(2),
            nn.Flatten(), nn.Dense(3 * 4, 2, rng=rng),
        ])
        x = rng.standard_normal((2, 1, 8, 2))
        y = seq.forward(x)
        assert y.shape == (2, 2)
        dx = seq.backward(np.ones_like(y))
        assert dx.shape == x.shape
