import numpy as np
import pytest
from hypothesis import given
from scipy.integrate import trapezoid
from hypothesis import strategies as st

from stabprior.distributions import (
    GaussianMatrix,
    InvalidSigmaError,
    gaussian_product,
    kl_diag_gaussian,
    layer_stats,
    sample_reparam,
)
from stabprior.numerics import ShapeError, make_rng

pos = st.floats(0.05, 20.0)
real = st.floats(-5.0, 5.0)


def g(mu, sigma):
    return GaussianMatrix(np.atleast_2d(mu), np.atleast_2d(sigma))


def grid_product_moments(mq, sq, mp, sp):
    """Mean and variance of the pointwise pdf product normalised on a fine grid."""
    lo = min(mq - 12 * sq, mp - 12 * sp)
    hi = max(mq + 12 * sq, mp + 12 * sp)
    x = np.linspace(lo, hi, 400_001)
    dens = np.exp(-0.5 * ((x - mq) / sq) ** 2 - 0.5 * ((x - mp) / sp) ** 2)
    dens /= trapezoid(dens, x)
    mean = trapezoid(x * dens, x)
    return mean, trapezoid((x - mean) ** 2 * dens, x)


class TestProduct:
    def test_symmetric_unit_case(self):
        r = gaussian_product(g(0.0, 1.0), g(0.0, 1.0))
        assert r.mu[0, 0] == 0.0 and r.var[0, 0] == pytest.approx(0.5, abs=1e-15)

    def test_against_grid_normalisation(self):
        m, v = grid_product_moments(1.0, 1.0, 3.0, 1.0)
        r = gaussian_product(g(1.0, 1.0), g(3.0, 1.0))
        assert (m, v) == pytest.approx((2.0, 0.5), abs=1e-6)
        assert abs(r.mu[0, 0] - m) < 1e-3 and abs(r.var[0, 0] - v) < 1e-3

    @pytest.mark.parametrize("args", [(0.3, 0.7, -1.2, 1.9), (-2.0, 2.5, 0.5, 0.4), (4.0, 0.2, 3.0, 3.0)])
    def test_grid_oracle_general(self, args):
        m, v = grid_product_moments(*args)
        r = gaussian_product(g(args[0], args[1]), g(args[2], args[3]))
        assert abs(r.mu[0, 0] - m) < 1e-3 and abs(r.var[0, 0] - v) < 1e-3

    def test_flat_prior_limit(self):
        q = g([[0.3, -1.0]], [[0.5, 2.0]])
        r = gaussian_product(q, (np.zeros((1, 2)), np.full(2, 1e8)))
        np.testing.assert_allclose(r.mu, q.mu, atol=1e-6)
        np.testing.assert_allclose(r.sigma, q.sigma, atol=1e-6)

    def test_per_unit_prior_std_broadcasts(self):
        q = g(np.zeros((3, 2)), np.ones((3, 2)))
        r = gaussian_product(q, (np.zeros((3, 2)), np.array([1.0, 3.0])))
        np.testing.assert_allclose(r.var[:, 0], 0.5)
        np.testing.assert_allclose(r.var[:, 1], 0.9)

    def test_rejects_non_positive_sigma(self):
        with pytest.raises(InvalidSigmaError):
            gaussian_product(g(0.0, 1.0), (0.0, 0.0))
        with pytest.raises(InvalidSigmaError):
            g(0.0, -1.0)

    @given(real, pos, real, pos)
    def test_role_swap_symmetry(self, mq, sq, mp, sp):
        a = gaussian_product(g(mq, sq), g(mp, sp))
        b = gaussian_product(g(mp, sp), g(mq, sq))
        assert a.mu[0, 0] == pytest.approx(b.mu[0, 0], rel=1e-12, abs=1e-12)
        assert a.sigma[0, 0] == pytest.approx(b.sigma[0, 0], rel=1e-12)

    @given(real, pos, real, pos)
    def test_variance_below_both(self, mq, sq, mp, sp):
        r = gaussian_product(g(mq, sq), g(mp, sp))
        assert r.var[0, 0] <= min(sq * sq, sp * sp) * (1 + 1e-12)


class TestKL:
    def test_identical_is_zero(self):
        q = g([[0.5, -1.0]], [[0.3, 2.0]])
        assert kl_diag_gaussian(q, q) == pytest.approx(0.0, abs=1e-12)

    def test_mean_shift(self):
        assert kl_diag_gaussian(g(1.0, 1.0), g(0.0, 1.0)) == pytest.approx(0.5, abs=1e-15)

    def test_against_monte_carlo(self):
        n = 10**7
        x = make_rng(5).standard_normal(n)
        # log q(x) - log p(x) for q = N(0, 1), p = N(0, 4)
        logratio = np.log(2.0) - 0.5 * x * x + x * x / 8.0
        est, se = logratio.mean(), logratio.std(ddof=1) / np.sqrt(n)
        closed = kl_diag_gaussian(g(0.0, 1.0), g(0.0, 2.0))
        assert closed == pytest.approx(0.318147, abs=1e-6)
        assert abs(est - closed) < 3 * se

    @given(real, pos, real, pos)
    def test_non_negative(self, mq, sq, mp, sp):
        assert kl_diag_gaussian(g(mq, sq), g(mp, sp)) >= -1e-12

    @given(real, pos, real, pos)
    def test_zero_only_at_equality(self, mq, sq, mp, sp):
        kl = kl_diag_gaussian(g(mq, sq), g(mp, sp))
        if abs(mq - mp) > 1e-3 or abs(sq - sp) > 1e-3:
            assert kl > 1e-12

    def test_rejects_bad_prior(self):
        with pytest.raises(InvalidSigmaError):
            kl_diag_gaussian(g(0.0, 1.0), (0.0, np.inf))


class TestSampling:
    def test_zero_noise_gives_mean(self):
        q = g([[2.0, -1.0]], [[3.0, 0.5]])
        np.testing.assert_array_equal(sample_reparam(q, np.zeros((1, 2))), q.mu)

    def test_forced_arithmetic(self):
        assert sample_reparam(g(2.0, 3.0), np.ones((1, 1)))[0, 0] == 5.0

    def test_empirical_moments(self):
        n = 10**6
        eps = make_rng(2).standard_normal((n, 1))
        w = sample_reparam(GaussianMatrix(np.ones((n, 1)), np.full((n, 1), 2.0)), eps)
        m, v = w.mean(), w.var(ddof=1)
        assert abs(m - 1.0) < 3 * np.sqrt(4.0 / n)
        assert abs(v - 4.0) < 3 * np.sqrt(2 * 16.0 / (n - 1))

    def test_shape_mismatch(self):
        with pytest.raises(ShapeError):
            sample_reparam(g(0.0, 1.0), np.zeros((2, 2)))

    @given(st.integers(0, 10**6), st.floats(-3, 3), st.floats(-3, 3))
    def test_linearity(self, seed, a, b):
        rng = make_rng(seed)
        q = GaussianMatrix(rng.standard_normal((3, 4)), np.exp(rng.standard_normal((3, 4))))
        e1, e2 = rng.standard_normal((3, 4)), rng.standard_normal((3, 4))
        lhs = sample_reparam(q, a * e1 + b * e2)
        rhs = a * sample_reparam(q, e1) + b * sample_reparam(q, e2) - (a + b - 1) * q.mu
        np.testing.assert_allclose(lhs, rhs, atol=1e-10)


class TestLayerStats:
    def test_single_weight(self):
        s = layer_stats(g(1.5, 2.0))
        assert s.mu_sum[0] == 1.5 and s.var_sum[0] == 4.0

    def test_two_weights(self):
        s = layer_stats(g([[1.0], [-1.0]], [[1.0], [2.0]]))
        assert s.mu_sum[0] == 0.0 and s.var_sum[0] == 5.0

    def test_against_column_loop(self):
        rng = make_rng(9)
        q = GaussianMatrix(rng.standard_normal((8, 4)), np.exp(rng.standard_normal((8, 4))))
        s = layer_stats(q)
        for j in range(4):
            assert s.mu_sum[j] == pytest.approx(sum(q.mu[i, j] for i in range(8)), abs=1e-12)
            assert s.var_sum[j] == pytest.approx(sum(q.sigma[i, j] ** 2 for i in range(8)), abs=1e-12)
