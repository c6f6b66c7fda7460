import numpy as np
import pytest
from numpy.testing import assert_allclose, assert_array_equal
from scipy import special, stats

from src.distributions import (
    Bernoulli,
    InverseGamma,
    Normal,
    RngStream,
    SymmetricUniform,
    derive_seed,
    inverse_gamma,
    sample_categorical_log,
    sample_categorical_log_rows,
    sample_dirichlet,
    sample_inverse_wishart,
    sample_mvn,
    sample_scalar,
)
from src.errors import AllWeightsNegInfinity, InvalidDof, InvalidParameter, NotPositiveDefinite


def within_3se(draws, target):
    draws = np.asarray(draws, dtype=float)
    se = draws.std(ddof=1) / np.sqrt(len(draws))
    return abs(draws.mean() - target) <= 3 * se


class TestRngStream:
    def test_same_path_same_draws(self):
        a = RngStream(5).child("x", 3).generator.random(4)
        b = RngStream(5).child("x", 3).generator.random(4)
        assert_array_equal(a, b)

    def test_independent_of_consumption_order(self):
        root = RngStream(5)
        first = root.child("a").generator.random(3)
        root.child("b").generator.random(100)
        again = RngStream(5).child("a").generator.random(3)
        assert_array_equal(first, again)

    def test_paths_differ(self):
        root = RngStream(5)
        assert not np.array_equal(root.child("a", 0).generator.random(3), root.child("a", 1).generator.random(3))
        assert not np.array_equal(root.child("a").generator.random(3), root.child("b").generator.random(3))

    def test_derive_seed_is_stable(self):
        assert derive_seed(1, "select_k", 3) == derive_seed(1, "select_k", 3)
        assert derive_seed(1, "select_k", 3) != derive_seed(1, "select_k", 4)
        assert 0 <= derive_seed(1, "select_k", 3) < 2**63


class TestScalarFamilies:
    def test_bernoulli_degenerate(self):
        stream = RngStream(0)
        assert sample_scalar(Bernoulli(0.0), stream.child("a")) == 0
        assert sample_scalar(Bernoulli(1.0), stream.child("b")) == 1

    def test_bernoulli_rejects_bad_probability(self):
        with pytest.raises(InvalidParameter):
            sample_scalar(Bernoulli(1.5), RngStream(0))

    def test_inverse_gamma_mean(self):
        draws = sample_scalar(InverseGamma(3.0, 4.0), RngStream(1), size=1_000_000)
        assert draws.mean() == pytest.approx(2.0, abs=0.01)

    def test_inverse_gamma_tiny_shape_stays_finite(self):
        draws = inverse_gamma(RngStream(1).generator, 0.001, 0.001, 10_000)
        assert np.all(np.isfinite(draws))
        assert np.all(draws > 0)
        scalar = inverse_gamma(RngStream(2).generator, 0.001, 0.001)
        assert isinstance(scalar, float) and 0 < scalar < np.inf

    def test_inverse_gamma_small_shape_log_mean(self):
        # log of IG(a, b) has mean log b - digamma(a) and variance trigamma(a)
        a, b, n = 0.2, 2.0, 200_000
        logs = np.log(inverse_gamma(RngStream(3).generator, a, b, n))
        se = np.sqrt(special.polygamma(1, a) / n)
        assert abs(logs.mean() - (np.log(b) - special.digamma(a))) <= 4 * se

    def test_inverse_gamma_broadcasts_rates(self):
        draws = inverse_gamma(RngStream(4).generator, 3.0, np.array([1.0, 2.0, 4.0]))
        assert draws.shape == (3,)

    def test_normal_rejects_non_positive_variance(self):
        with pytest.raises(InvalidParameter):
            sample_scalar(Normal(0.0, 0.0), RngStream(0))

    def test_symmetric_uniform_support(self):
        draws = sample_scalar(SymmetricUniform(0.2, 2.0), RngStream(2), size=20_000)
        assert np.all((np.abs(draws) > 0.2) & (np.abs(draws) < 2.0))
        assert 0.47 < np.mean(draws > 0) < 0.53


class TestDirichlet:
    def test_single_component(self):
        assert_array_equal(sample_dirichlet([4.0], RngStream(0)), [1.0])

    def test_concentrated(self):
        draw = sample_dirichlet([1e6, 1e6], RngStream(0))
        assert_allclose(draw, [0.5, 0.5], atol=0.01)

    def test_on_simplex(self):
        draw = sample_dirichlet([0.5, 1.0, 2.0], RngStream(3))
        assert draw.sum() == pytest.approx(1.0)
        assert np.all(draw >= 0)

    def test_flat_mean(self):
        stream = RngStream(4)
        draws = np.array([sample_dirichlet([1.0, 1.0, 1.0], stream) for _ in range(20_000)])
        for k in range(3):
            assert within_3se(draws[:, k], 1.0 / 3.0)

    def test_rejects_non_positive(self):
        with pytest.raises(InvalidParameter):
            sample_dirichlet([1.0, 0.0], RngStream(0))


class TestCategorical:
    def test_equal_weights(self):
        stream = RngStream(6)
        draws = np.array([sample_categorical_log([0.0, 0.0], stream) for _ in range(20_000)])
        assert within_3se(draws, 0.5)

    def test_negligible_weight_never_drawn(self):
        stream = RngStream(6)
        draws = [sample_categorical_log([-1e5, 0.0], stream) for _ in range(1000)]
        assert set(draws) == {1}

    def test_all_negative_infinity(self):
        with pytest.raises(AllWeightsNegInfinity):
            sample_categorical_log([-np.inf, -np.inf], RngStream(0))

    def test_rows_match_proportions(self):
        weights = np.tile(np.log([1.0, 2.0, 3.0]), (60_000, 1))
        draws = sample_categorical_log_rows(weights, RngStream(8))
        counts = np.bincount(draws, minlength=3)
        assert stats.chisquare(counts, 60_000 * np.array([1, 2, 3]) / 6).pvalue > 0.001

    def test_shift_invariance(self):
        weights = np.tile(np.log([1.0, 2.0, 3.0]) + 1000.0, (60_000, 1))
        draws = sample_categorical_log_rows(weights, RngStream(9))
        counts = np.bincount(draws, minlength=3)
        assert stats.chisquare(counts, 60_000 * np.array([1, 2, 3]) / 6).pvalue > 0.001

    def test_trailing_zero_weight_never_drawn(self, monkeypatch):
        # cumulative sums that round below 1 must not hand out the -inf tail
        monkeypatch.setattr(
            "src.distributions._log_probabilities",
            lambda w: np.tile([0.3, 0.7 - 1e-12, 0.0], (w.shape[0], 1)),
        )

        class AlmostOne:
            def random(self, size=None):
                return np.full(size, 1.0 - 1e-13)

        draws = sample_categorical_log_rows(np.log([[0.3, 0.7, 1.0]] * 4), AlmostOne())
        assert_array_equal(draws, [1, 1, 1, 1])
        assert sample_categorical_log([np.log(0.3), np.log(0.7), -np.inf], AlmostOne()) == 1

    def test_rows_all_negative_infinity(self):
        with pytest.raises(AllWeightsNegInfinity):
            sample_categorical_log_rows(np.array([[0.0, 1.0], [-np.inf, -np.inf]]), RngStream(0))


class TestMultivariateNormal:
    def test_one_dimension_matches_normal(self):
        mvn = sample_mvn([2.0], [[4.0]], RngStream(10).child("d"))
        normal = sample_scalar(Normal(2.0, 4.0), RngStream(10).child("d"))
        assert_allclose(mvn[0], normal, rtol=1e-12)

    def test_identity_covariance(self):
        draws = sample_mvn(np.zeros(3), np.eye(3), RngStream(11), size=100_000)
        assert_allclose(np.cov(draws.T), np.eye(3), atol=0.02)

    def test_correlation(self):
        cov = np.array([[1.0, 0.9], [0.9, 1.0]])
        draws = sample_mvn(np.zeros(2), cov, RngStream(12), size=100_000)
        assert np.corrcoef(draws.T)[0, 1] == pytest.approx(0.9, abs=0.003)

    def test_not_positive_definite(self):
        with pytest.raises(NotPositiveDefinite):
            sample_mvn(np.zeros(2), [[1.0, 2.0], [2.0, 1.0]], RngStream(0))

    def test_asymmetric(self):
        with pytest.raises(NotPositiveDefinite):
            sample_mvn(np.zeros(2), [[1.0, 0.5], [0.0, 1.0]], RngStream(0))


class TestInverseWishart:
    def test_one_dimension_is_inverse_gamma(self):
        stream = RngStream(13)
        draws = np.array([sample_inverse_wishart([[2.0]], 6.0, stream)[0, 0] for _ in range(20_000)])
        assert within_3se(draws, 0.5)

    def test_draw_is_symmetric_positive_definite(self):
        scale = 0.5 * np.eye(4) + 0.5 * np.ones((4, 4))
        draw = sample_inverse_wishart(scale, 10.0, RngStream(14))
        assert_allclose(draw, draw.T)
        assert np.all(np.linalg.eigvalsh(draw) > 0)

    def test_mean(self):
        d, dof = 5, 60.0
        scale = 0.5 * np.eye(d) + 0.5 * np.ones((d, d))
        stream = RngStream(15)
        draws = np.array([sample_inverse_wishart(scale, dof, stream) for _ in range(5000)])
        target = scale / (dof - d - 1)
        se = draws.std(axis=0, ddof=1) / np.sqrt(len(draws))
        assert np.all(np.abs(draws.mean(axis=0) - target) <= 4 * se)

    def test_invalid_dof(self):
        with pytest.raises(InvalidDof):
            sample_inverse_wishart(np.eye(3), 2.0, RngStream(0))
