import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mmst import tensor as T
from mmst.errors import ContractError, DimensionError
from mmst.rng import stream
from mmst.tensor import Tensor

from oracles import conv2d_naive, fd_gradient


class TestMatmul:
    def test_identity(self):
        x = np.random.default_rng(0).standard_normal((3, 4))
        out = Tensor(np.eye(3)) @ Tensor(x)
        np.testing.assert_array_equal(out.data, x)

    def test_hand_arithmetic(self):
        out = Tensor([[1.0, 2.0], [3.0, 4.0]]) @ Tensor([[1.0], [1.0]])
        np.testing.assert_array_equal(out.data, [[3.0], [7.0]])

    def test_gradient_vs_finite_difference(self, rng):
        a = rng.standard_normal((4, 5))
        b = rng.standard_normal((5, 2))
        ta = Tensor(a, requires_grad=True)
        tb = Tensor(b, requires_grad=True)
        (ta @ tb).sum().backward()
        ga = fd_gradient(lambda x: float((x @ b).sum()), a)
        gb = fd_gradient(lambda x: float((a @ x).sum()), b)
        assert np.abs(ta.grad - ga).max() / max(np.abs(ga).max(), 1) < 1e-4
        assert np.abs(tb.grad - gb).max() / max(np.abs(gb).max(), 1) < 1e-4

    def test_shape_mismatch(self):
        with pytest.raises(DimensionError):
            Tensor(np.zeros((2, 3))) @ Tensor(np.zeros((4, 2)))


class TestConv2d:
    def test_zero_input(self):
        x = Tensor(np.zeros((1, 4, 4)))
        w = Tensor(np.random.default_rng(0).standard_normal((2, 1, 2, 2)))
        b = Tensor(np.zeros(2))
        out = T.conv2d(x, w, b)
        assert np.all(out.data == 0)

    def test_one_by_one_kernel_sums_channels(self, rng):
        x = rng.standard_normal((3, 5, 5))
        w = np.ones((1, 3, 1, 1))
        out = T.conv2d(Tensor(x), Tensor(w))
        np.testing.assert_allclose(out.data[0], x.sum(axis=0), rtol=1e-12)

    def test_sliding_window_oracle(self, rng):
        x = rng.standard_normal((1, 3, 3))
        w = rng.standard_normal((1, 1, 2, 2))
        out = T.conv2d(Tensor(x), Tensor(w))
        expected = conv2d_naive(x, w, None, stride=1, padding=0)
        np.testing.assert_allclose(out.data, expected, atol=1e-12)

    @pytest.mark.parametrize("stride,padding", [(1, 0), (2, 1), (1, 2)])
    def test_oracle_with_stride_padding(self, rng, stride, padding):
        x = rng.standard_normal((2, 6, 5))
        w = rng.standard_normal((3, 2, 3, 3))
        b = rng.standard_normal(3)
        out = T.conv2d(Tensor(x), Tensor(w), Tensor(b), stride=stride,
                       padding=padding)
        expected = conv2d_naive(x, w, b, stride=stride, padding=padding)
        np.testing.assert_allclose(out.data, expected, atol=1e-10)

    def test_batched_matches_single(self, rng):
        x = rng.standard_normal((4, 2, 6, 6))
        w = rng.standard_normal((3, 2, 3, 3))
        b = rng.standard_normal(3)
        batched = T.conv2d(Tensor(x), Tensor(w), Tensor(b), stride=2, padding=1)
        for i in range(4):
            single = T.conv2d(Tensor(x[i]), Tensor(w), Tensor(b), stride=2,
                              padding=1)
            np.testing.assert_allclose(batched.data[i], single.data, atol=1e-12)

    def test_kernel_larger_than_padded_input(self):
        with pytest.raises(DimensionError):
            T.conv2d(Tensor(np.zeros((1, 2, 2))),
                     Tensor(np.zeros((1, 1, 5, 5))))


class TestLeakyRelu:
    def test_positive_passthrough(self):
        assert T.leaky_relu(Tensor([2.0]), 1e-2).data[0] == 2.0

    def test_negative_slope(self):
        assert T.leaky_relu(Tensor([-1.0]), 1e-2).data[0] == pytest.approx(-0.01)

    def test_boundary(self):
        assert T.leaky_relu(Tensor([0.0]), 1e-2).data[0] == 0.0


class TestSquash:
    def test_zero_vector(self):
        out = T.squash(Tensor(np.zeros((1, 4))), axis=-1)
        assert np.all(out.data == 0)

    def test_unit_vector_exact_half(self):
        u = np.zeros((1, 5))
        u[0, 2] = 1.0
        out = T.squash(Tensor(u), axis=-1)
        mag = np.linalg.norm(out.data)
        assert abs(mag - 0.5) < 1e-12

    def test_asymptote(self):
        u = np.zeros((1, 3))
        u[0, 0] = 1000.0
        mag = np.linalg.norm(T.squash(Tensor(u), axis=-1).data)
        assert 0.999 < mag < 1.0

    @settings(max_examples=100, deadline=None)
    @given(st.lists(st.floats(-1e6, 1e6), min_size=2, max_size=6))
    def test_magnitude_below_one_and_direction(self, values):
        v = np.array([values], dtype=np.float64)
        out = T.squash(Tensor(v), axis=-1).data
        mag = np.linalg.norm(out)
        assert 0.0 <= mag < 1.0
        n = np.linalg.norm(v)
        if n > 1e-9:
            cos = float(out @ v.T) / (mag * n + 1e-300)
            assert cos > 1.0 - 1e-9


class TestLstmCell:
    def _weights(self, rng, input_size=3, hidden=4):
        return (rng.standard_normal((input_size, 4 * hidden)),
                rng.standard_normal((hidden, 4 * hidden)),
                rng.standard_normal(4 * hidden))

    def test_zero_weights_zero_state(self, rng):
        x = Tensor(rng.standard_normal((2, 3)))
        h = T.zeros((2, 4), dtype=np.float64)
        c = T.zeros((2, 4), dtype=np.float64)
        h2, c2 = T.lstm_cell(x, h, c, Tensor(np.zeros((3, 16))),
                             Tensor(np.zeros((4, 16))), Tensor(np.zeros(16)))
        assert np.all(h2.data == 0)

    def test_gradient_vs_finite_difference(self, rng):
        x = rng.standard_normal((2, 3))
        h0 = rng.standard_normal((2, 4))
        c0 = rng.standard_normal((2, 4))
        wx, wh, b = self._weights(rng)

        twx = Tensor(wx, requires_grad=True)
        twh = Tensor(wh, requires_grad=True)
        tb = Tensor(b, requires_grad=True)
        h2, _ = T.lstm_cell(Tensor(x), Tensor(h0), Tensor(c0), twx, twh, tb)
        h2.sum().backward()

        for t, arr, idx in ((twx, wx, 3), (twh, wh, 4), (tb, b, 5)):
            def f(v, idx=idx):
                args = [Tensor(x), Tensor(h0), Tensor(c0), Tensor(wx),
                        Tensor(wh), Tensor(b)]
                args[idx] = Tensor(v)
                out, _ = T.lstm_cell(*args)
                return float(out.data.sum())
            numeric = fd_gradient(f, arr)
            denom = max(np.abs(numeric).max(), 1.0)
            assert np.abs(t.grad - numeric).max() / denom < 1e-4

    def test_deterministic(self, rng):
        x = rng.standard_normal((2, 3))
        wx, wh, b = self._weights(rng)
        args = lambda: (Tensor(x), T.zeros((2, 4), dtype=np.float64),
                        T.zeros((2, 4), dtype=np.float64), Tensor(wx),
                        Tensor(wh), Tensor(b))
        h_a, c_a = T.lstm_cell(*args())
        h_b, c_b = T.lstm_cell(*args())
        assert np.array_equal(h_a.data, h_b.data)
        assert np.array_equal(c_a.data, c_b.data)


class TestBatchNorm:
    def _layer(self, features=3):
        from mmst.nn import BatchNorm
        return BatchNorm(features, np.float64)

    def test_fixed_point(self, rng):
        x = rng.standard_normal((16, 3))
        x = (x - x.mean(axis=0)) / x.std(axis=0)
        out = self._layer()(Tensor(x), train=True)
        np.testing.assert_allclose(out.data, x, atol=1e-6)

    def test_gamma_zero_collapses_to_beta(self, rng):
        layer = self._layer()
        layer.gamma.data = np.zeros(3)
        layer.beta.data = np.array([1.0, -2.0, 0.5])
        out = layer(Tensor(rng.standard_normal((8, 3))), train=True)
        np.testing.assert_allclose(out.data,
                                   np.broadcast_to(layer.beta.data, (8, 3)),
                                   atol=1e-12)

    def test_training_statistics(self, rng):
        x = rng.standard_normal((64, 3)) * 4.0 + 2.0
        out = self._layer()(Tensor(x), train=True).data
        np.testing.assert_allclose(out.mean(axis=0), 0.0, atol=1e-5)
        np.testing.assert_allclose(out.var(axis=0), 1.0, atol=1e-5)

    def test_degenerate_batch(self):
        from mmst.errors import DegenerateBatchError
        with pytest.raises(DegenerateBatchError):
            self._layer()(Tensor(np.zeros((1, 3))), train=True)

    def test_inference_uses_running_stats(self, rng):
        layer = self._layer()
        x = rng.standard_normal((32, 3)) * 3.0 + 1.0
        for _ in range(200):
            layer(Tensor(x), train=True)
        out = layer(Tensor(x), train=False).data
        np.testing.assert_allclose(out.mean(axis=0), 0.0, atol=1e-2)


class TestLayout:
    def test_concat_singleton(self, rng):
        a = rng.standard_normal((2, 3))
        out = T.concat([Tensor(a)], axis=0)
        np.testing.assert_array_equal(out.data, a)

    def test_reshape_involution(self, rng):
        a = rng.standard_normal((3, 4))
        t = Tensor(a).reshape(2, 6).reshape(3, 4)
        np.testing.assert_array_equal(t.data, a)

    def test_concat_gradient_routes_to_sources(self, rng):
        a = Tensor(rng.standard_normal((2, 3)), requires_grad=True)
        b = Tensor(rng.standard_normal((2, 2)), requires_grad=True)
        T.concat([a, b], axis=1).sum().backward()
        np.testing.assert_array_equal(a.grad, np.ones((2, 3)))
        np.testing.assert_array_equal(b.grad, np.ones((2, 2)))

    def test_slice_gradient(self, rng):
        a = Tensor(rng.standard_normal((4, 4)), requires_grad=True)
        a[1:3, ::2].sum().backward()
        expected = np.zeros((4, 4))
        expected[1:3, ::2] = 1.0
        np.testing.assert_array_equal(a.grad, expected)

    def test_layout_ops_preserve_values(self, rng):
        a = rng.standard_normal((2, 3, 4))
        assert sorted(Tensor(a).reshape(24).data.tolist()) \
            == sorted(a.reshape(-1).tolist())
        both = T.concat([Tensor(a), Tensor(a)], axis=0)
        assert both.data.size == 2 * a.size


class TestBackward:
    def test_identity_gradient(self):
        x = Tensor(np.array(3.0), requires_grad=True)
        x.backward()
        assert x.grad == 1.0

    def test_hand_derivative(self):
        x = Tensor(np.array([1.0, 2.0]), requires_grad=True)
        (x * x).sum().backward()
        np.testing.assert_array_equal(x.grad, [2.0, 4.0])

    def test_non_scalar_loss_rejected(self):
        x = Tensor(np.ones(3), requires_grad=True)
        with pytest.raises(ContractError):
            (x * 2).backward()

    def test_unused_parameter_zero_gradient(self):
        x = Tensor(np.ones(2), requires_grad=True)
        unused = Tensor(np.ones(3), requires_grad=True)
        x.sum().backward()
        grads = T.grads_of([x, unused])
        np.testing.assert_array_equal(grads[1], np.zeros(3))
        assert unused.grad is None

    def test_gradient_accumulation_order_deterministic(self, rng):
        def build():
            x = Tensor(rng.standard_normal((4, 4)), requires_grad=False)
            w = Tensor(np.linspace(0, 1, 16).reshape(4, 4), requires_grad=True)
            y = (x @ w) + w * 2.0 - w.tanh()
            y.sum().backward()
            return w.grad
        state = rng.bit_generator.state
        g1 = build()
        rng.bit_generator.state = state
        g2 = build()
        assert np.array_equal(g1, g2)


class TestGaussianSample:
    def test_same_seed_identical(self):
        a = T.gaussian_sample((5, 5), stream(7, 4), dtype=np.float64)
        b = T.gaussian_sample((5, 5), stream(7, 4), dtype=np.float64)
        assert np.array_equal(a.data, b.data)

    def test_moments(self):
        draws = T.gaussian_sample((100_000,), stream(3, 4), dtype=np.float64)
        assert abs(draws.data.mean()) < 0.02
        assert abs(draws.data.var() - 1.0) < 0.03

    def test_different_seeds_differ(self):
        a = T.gaussian_sample((10,), stream(1, 4), dtype=np.float64)
        b = T.gaussian_sample((10,), stream(2, 4), dtype=np.float64)
        assert not np.array_equal(a.data, b.data)


class TestNoGrad:
    def test_no_graph_recorded(self):
        x = Tensor(np.ones(3), requires_grad=True)
        with T.no_grad():
            y = (x * 2).sum()
        assert y._parents == ()
        y.backward()
        assert x.grad is None
