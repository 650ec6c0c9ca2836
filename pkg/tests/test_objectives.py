import numpy as np
import pytest

from mmst import objectives
from mmst.config import LossConfig
from mmst.cvae import GaussianParams
from mmst.errors import ContractError
from mmst.rng import stream
from mmst.tensor import Tensor

from oracles import kl_monte_carlo, min_metrics_brute, mon_brute


class TestKlDivergence:
    def test_prior_equals_posterior_exact_zero(self):
        params = GaussianParams.from_arrays(np.zeros(4), np.ones(4))
        assert objectives.kl_divergence(params).item() == 0.0

    def test_unit_mean_exact_half(self):
        params = GaussianParams.from_arrays(np.array([1.0]), np.array([1.0]))
        assert abs(objectives.kl_divergence(params).item() - 0.5) < 1e-12

    def test_monte_carlo_oracle(self, rng):
        for _ in range(5):
            mu = rng.uniform(-1.5, 1.5, 6)
            sigma = rng.uniform(0.4, 2.0, 6)
            closed = objectives.kl_divergence(
                GaussianParams.from_arrays(mu, sigma)).item()
            estimate, se = kl_monte_carlo(mu, sigma, 100_000, rng)
            assert abs(closed - estimate) < 3 * se

    def test_nonnegative(self, rng):
        for _ in range(50):
            mu = rng.uniform(-3, 3, 5)
            sigma = rng.uniform(0.1, 3.0, 5)
            val = objectives.kl_divergence(
                GaussianParams.from_arrays(mu, sigma)).item()
            assert val >= 0.0

    def test_nonpositive_sigma_rejected(self):
        with pytest.raises(ContractError):
            GaussianParams.from_arrays(np.zeros(3), np.array([1.0, 0.0, 1.0]))


class TestDistance:
    def test_coincidence_zero(self, rng):
        y = Tensor(rng.standard_normal((6, 2)))
        for kind in objectives.DISTANCE_KINDS:
            assert objectives.distance(y, y, kind).item() == 0.0

    def test_hand_arithmetic(self):
        y = Tensor(np.zeros((3, 2)))
        pred = np.zeros((3, 2))
        pred[1] = (3.0, 4.0)
        p = Tensor(pred)
        assert objectives.distance(y, p, "l2").item() == pytest.approx(25.0)
        assert objectives.distance(y, p, "l1").item() == pytest.approx(7.0)
        assert objectives.distance(y, p, "blend", 0.5).item() == pytest.approx(16.0)

    def test_default_blend_lambda(self):
        assert LossConfig().blend_lambda == 0.5

    def test_length_mismatch(self):
        with pytest.raises(ContractError):
            objectives.distance(Tensor(np.zeros((3, 2))),
                                Tensor(np.zeros((4, 2))), "l2")


class TestMonLoss:
    def test_single_sample_equals_distance(self, rng):
        y = rng.standard_normal((5, 2))
        s = rng.standard_normal((1, 1, 5, 2))
        got = objectives.mon_loss(Tensor(y[None]), Tensor(s), LossConfig()).item()
        want = objectives.distance(Tensor(y), Tensor(s[0, 0]), "l2").item()
        assert got == pytest.approx(want, rel=1e-6)

    def test_exact_hit_zero(self, rng):
        y = rng.standard_normal((2, 5, 2))
        s = rng.standard_normal((2, 4, 5, 2))
        s[:, 2] = y
        got = objectives.mon_loss(Tensor(y), Tensor(s), LossConfig()).item()
        assert got == 0.0

    @pytest.mark.parametrize("kind", ["l1", "l2", "blend"])
    def test_brute_force_oracle(self, rng, kind):
        y = rng.standard_normal((4, 6, 2))
        s = rng.standard_normal((4, 50, 6, 2))
        cfg = LossConfig(distance=kind)
        got = objectives.mon_loss(Tensor(y), Tensor(s), cfg).item()
        assert got == pytest.approx(mon_brute(y, s, kind), rel=1e-9)

    def test_empty_sample_set_rejected(self, rng):
        with pytest.raises(ContractError):
            objectives.mon_loss(Tensor(rng.standard_normal((2, 5, 2))),
                                Tensor(np.zeros((2, 0, 5, 2))), LossConfig())

    def test_bounded_by_each_sample(self, rng):
        y = rng.standard_normal((3, 5, 2))
        s = rng.standard_normal((3, 8, 5, 2))
        mon = objectives.mon_loss(Tensor(y), Tensor(s), LossConfig()).item()
        for k in range(8):
            per = sum(objectives.distance(Tensor(y[i]), Tensor(s[i, k]),
                                          "l2").item() for i in range(3))
            assert mon <= per + 1e-9

    def test_gradient_only_to_argmin_sample(self, rng):
        y = rng.standard_normal((1, 4, 2))
        s = rng.standard_normal((1, 3, 4, 2))
        ts = Tensor(s, requires_grad=True)
        objectives.mon_loss(Tensor(y), ts, LossConfig()).backward()
        dists = ((s - y[:, None]) ** 2).sum(axis=(2, 3))
        winner = int(dists[0].argmin())
        for k in range(3):
            block = ts.grad[0, k]
            if k == winner:
                assert np.abs(block).max() > 0
            else:
                assert np.all(block == 0)

    def test_tie_breaks_to_lowest_index(self):
        y = np.zeros((1, 2, 2))
        s = np.ones((1, 3, 2, 2))  # all samples tie
        ts = Tensor(s, requires_grad=True)
        objectives.mon_loss(Tensor(y), ts, LossConfig()).backward()
        assert np.abs(ts.grad[0, 0]).max() > 0
        assert np.all(ts.grad[0, 1:] == 0)


class TestMetrics:
    def test_perfect_predictions(self, rng):
        y = rng.standard_normal((3, 6, 2))
        s = np.repeat(y[:, None], 4, axis=1)
        assert objectives.min_ade(y, s, 4) == 0.0
        assert objectives.min_fde(y, s, 4) == 0.0

    def test_constant_offset(self):
        y = np.zeros((1, 12, 2))
        s = np.zeros((1, 1, 12, 2))
        s[..., 0] = 1.0  # 1 m offset at every step
        assert objectives.min_ade(y, s, 1) == pytest.approx(1.0)
        assert objectives.min_fde(y, s, 1) == pytest.approx(1.0)

    def test_brute_force_oracle(self, rng):
        for _ in range(20):
            n, k = int(rng.integers(1, 6)), int(rng.integers(1, 10))
            y = rng.standard_normal((n, 7, 2))
            s = rng.standard_normal((n, k + int(rng.integers(0, 4)), 7, 2))
            ade, fde = min_metrics_brute(y, s, k)
            assert objectives.min_ade(y, s, k) == pytest.approx(ade, abs=1e-9)
            assert objectives.min_fde(y, s, k) == pytest.approx(fde, abs=1e-9)

    def test_nonincreasing_in_k(self, rng):
        y = rng.standard_normal((5, 6, 2))
        s = rng.standard_normal((5, 32, 6, 2))
        ades = [objectives.min_ade(y, s, k) for k in range(1, 33)]
        fdes = [objectives.min_fde(y, s, k) for k in range(1, 33)]
        assert all(a >= b - 1e-12 for a, b in zip(ades, ades[1:]))
        assert all(a >= b - 1e-12 for a, b in zip(fdes, fdes[1:]))

    def test_insufficient_samples(self, rng):
        y = rng.standard_normal((2, 5, 2))
        s = rng.standard_normal((2, 3, 5, 2))
        with pytest.raises(ContractError):
            objectives.min_ade(y, s, 4)

    def test_literal_mode_formula(self, rng):
        y = rng.standard_normal((4, 6, 2))
        s = rng.standard_normal((4, 5, 6, 2))
        k = 3
        # (1/n) * sqrt(sum_i min_k ||Y_i - Yhat_i^k||^2)
        per = ((s[:, :k] - y[:, None]) ** 2).sum(axis=(2, 3)).min(axis=1)
        want = np.sqrt(per.sum()) / len(y)
        assert objectives.min_ade(y, s, k, "literal") == pytest.approx(want)
        per_f = ((s[:, :k, -1] - y[:, None, -1]) ** 2).sum(axis=-1).min(axis=1)
        want_f = np.sqrt(per_f.sum()) / len(y)
        assert objectives.min_fde(y, s, k, "literal") == pytest.approx(want_f)


class TestTotalLoss:
    def test_beta_zero_reduces_to_mon(self, rng):
        y = Tensor(rng.standard_normal((2, 5, 2)))
        s = Tensor(rng.standard_normal((2, 4, 5, 2)))
        params = GaussianParams.from_arrays(rng.standard_normal(4),
                                            rng.uniform(0.5, 2, 4))
        cfg = LossConfig(beta=0.0)
        total, mon, _ = objectives.total_loss(y, s, params, cfg)
        assert total.item() == pytest.approx(mon.item())

    def test_alpha_zero_prior_posterior(self, rng):
        y = Tensor(rng.standard_normal((2, 5, 2)))
        s = Tensor(rng.standard_normal((2, 4, 5, 2)))
        params = GaussianParams.from_arrays(np.zeros(4), np.ones(4))
        total, _, _ = objectives.total_loss(y, s, params, LossConfig(alpha=0.0))
        assert total.item() == 0.0
