import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from bdcca._validation import SingularCovarianceError
from bdcca.cca import (
    CCA,
    CovarianceEstimate,
    cca_fit,
    estimate_covariances,
    total_correlation,
    whitened_cross,
)

from oracles import (
    alternating_top_correlation,
    independent_trace_norm,
    mp_whitened_cross,
    naive_covariance,
    qr_canonical_correlations,
)


def correlated_views(rng, n1=3, n2=2, m=60, noise=0.5):
    z = rng.normal(size=(min(n1, n2), m))
    x1 = rng.normal(size=(n1, min(n1, n2))) @ z + noise * rng.normal(size=(n1, m))
    x2 = rng.normal(size=(n2, min(n1, n2))) @ z + noise * rng.normal(size=(n2, m))
    return x1, x2


class TestCovariances:
    def test_two_point_example(self):
        cov = estimate_covariances([[1, -1]], [[1, -1]], 0.0)
        for c in (cov.c11, cov.c22, cov.c12):
            np.testing.assert_array_equal(c, [[2.0]])

    def test_additive_regularizer(self):
        rng = np.random.default_rng(0)
        h1, h2 = rng.normal(size=(3, 10)), rng.normal(size=(2, 10))
        base = estimate_covariances(h1, h2, 0.0)
        reg = estimate_covariances(h1, h2, 0.1)
        np.testing.assert_array_equal(reg.c11, base.c11 + 0.1 * np.eye(3))
        np.testing.assert_array_equal(reg.c22, base.c22 + 0.1 * np.eye(2))
        np.testing.assert_array_equal(reg.c12, base.c12)

    def test_matches_naive_loops(self):
        rng = np.random.default_rng(1)
        h1, h2 = rng.normal(size=(3, 10)), rng.normal(size=(2, 10))
        cov = estimate_covariances(h1, h2, 0.0)
        np.testing.assert_allclose(cov.c11, naive_covariance(h1, h1), atol=1e-12)
        np.testing.assert_allclose(cov.c22, naive_covariance(h2, h2), atol=1e-12)
        np.testing.assert_allclose(cov.c12, naive_covariance(h1, h2), atol=1e-12)

    def test_errors(self):
        with pytest.raises(ValueError, match="sample counts"):
            estimate_covariances(np.ones((2, 5)), np.ones((2, 6)))
        with pytest.raises(ValueError, match="at least 2"):
            estimate_covariances(np.ones((2, 1)), np.ones((2, 1)))
        with pytest.raises(ValueError, match="r1"):
            estimate_covariances(np.ones((2, 5)), np.ones((2, 5)), -1.0)


class TestWhitenedCross:
    def test_identity_whitening(self):
        c = np.array([[0.3, 0.1], [-0.2, 0.4]])
        cov = CovarianceEstimate(np.eye(2), np.eye(2), c, 0.0, 10)
        np.testing.assert_allclose(whitened_cross(cov), c, atol=1e-15)

    def test_zero_cross(self):
        cov = CovarianceEstimate(np.diag([2.0, 3.0]), np.eye(3), np.zeros((2, 3)), 0.0, 10)
        assert not whitened_cross(cov).any()

    def test_extended_precision_oracle(self):
        rng = np.random.default_rng(7)
        a, b = rng.normal(size=(2, 2)), rng.normal(size=(2, 2))
        c11, c22 = a @ a.T + 0.5 * np.eye(2), b @ b.T + 0.5 * np.eye(2)
        c12 = rng.normal(size=(2, 2))
        got = whitened_cross(CovarianceEstimate(c11, c22, c12, 0.0, 10))
        np.testing.assert_allclose(got, mp_whitened_cross(c11, c12, c22), atol=1e-13)

    def test_singular_without_regularization(self):
        h = np.array([[1.0, 2.0, 3.0], [2.0, 4.0, 6.0]])
        with pytest.raises(SingularCovarianceError, match="r1 > 0"):
            whitened_cross(estimate_covariances(h, h, 0.0))
        whitened_cross(estimate_covariances(h, h, 1e-3))


class TestCcaFit:
    def test_identical_views(self):
        x = np.random.default_rng(0).normal(size=(3, 40))
        np.testing.assert_allclose(cca_fit(x, x, 3).correlations, 1.0, atol=1e-10)

    def test_negated_views(self):
        x = np.random.default_rng(1).normal(size=(3, 40))
        np.testing.assert_allclose(cca_fit(x, -x, 3).correlations, 1.0, atol=1e-10)

    @pytest.mark.parametrize("seed", range(5))
    def test_top_correlation_matches_alternating_oracle(self, seed):
        x1, x2 = correlated_views(np.random.default_rng(seed), 2, 2, 50)
        sol = cca_fit(x1, x2, 1)
        assert abs(sol.correlations[0] - alternating_top_correlation(x1, x2)) < 1e-5

    def test_correlations_match_qr_oracle(self):
        x1, x2 = correlated_views(np.random.default_rng(3), 4, 3, 50)
        np.testing.assert_allclose(cca_fit(x1, x2).correlations,
                                   qr_canonical_correlations(x1, x2), atol=1e-8)

    def test_whitened_orthonormality(self):
        x1, x2 = correlated_views(np.random.default_rng(4), 4, 3, 80)
        sol = cca_fit(x1, x2, 3, r1=1e-3)
        cov = estimate_covariances(x1, x2, 1e-3)
        np.testing.assert_allclose(sol.a1.T @ cov.c11 @ sol.a1, np.eye(3), atol=1e-8)
        np.testing.assert_allclose(sol.a2.T @ cov.c22 @ sol.a2, np.eye(3), atol=1e-8)

    def test_projection_correlations_equal_reported(self):
        x1, x2 = correlated_views(np.random.default_rng(5), 3, 3, 100)
        sol = cca_fit(x1, x2)
        z1, z2 = sol.a1.T @ x1, sol.a2.T @ x2
        for i in range(3):
            assert abs(np.corrcoef(z1[i], z2[i])[0, 1] - sol.correlations[i]) < 1e-10

    def test_sign_convention(self):
        x1, x2 = correlated_views(np.random.default_rng(6), 3, 3, 100)
        sol = cca_fit(x1, x2)
        cov = estimate_covariances(x1, x2, 0.0)
        from bdcca.cca import inv_sqrt

        u = np.linalg.inv(inv_sqrt(cov.c11)) @ sol.a1
        pivots = np.argmax(np.abs(u), axis=0)
        assert np.all(u[pivots, np.arange(3)] > 0)

    def test_k_out_of_range(self):
        x1, x2 = correlated_views(np.random.default_rng(0), 3, 2, 30)
        with pytest.raises(ValueError, match="k must be"):
            cca_fit(x1, x2, 3)
        with pytest.raises(ValueError, match="k must be"):
            cca_fit(x1, x2, 0)

    def test_few_samples_warns(self):
        rng = np.random.default_rng(0)
        with pytest.warns(RuntimeWarning, match="rank deficient"):
            cca_fit(rng.normal(size=(3, 3)), rng.normal(size=(3, 3)), 1, r1=0.1)

    @settings(max_examples=25, deadline=None)
    @given(st.integers(0, 10_000), st.floats(0.1, 10.0), st.floats(-10.0, -0.1))
    def test_scale_invariance(self, seed, alpha, beta):
        x1, x2 = correlated_views(np.random.default_rng(seed), 3, 2, 50)
        base = cca_fit(x1, x2).correlations
        np.testing.assert_allclose(cca_fit(alpha * x1, beta * x2).correlations, base, atol=1e-8)

    @settings(max_examples=25, deadline=None)
    @given(st.integers(0, 10_000))
    def test_invertible_map_invariance(self, seed):
        rng = np.random.default_rng(seed)
        x1, x2 = correlated_views(rng, 3, 3, 60)
        a = rng.normal(size=(3, 3)) + 3 * np.eye(3)
        base = cca_fit(x1, x2).correlations
        np.testing.assert_allclose(cca_fit(a @ x1, x2).correlations, base, atol=1e-8)

    @settings(max_examples=25, deadline=None)
    @given(st.integers(0, 10_000), st.integers(1, 4), st.integers(1, 4))
    def test_range_and_order(self, seed, n1, n2):
        rng = np.random.default_rng(seed)
        sol = cca_fit(rng.normal(size=(n1, 30)), rng.normal(size=(n2, 30)))
        c = sol.correlations
        assert np.all((c >= 0) & (c <= 1 + 1e-10))
        assert np.all(np.diff(c) <= 1e-12)


class TestTotalCorrelation:
    def test_identity_limit(self):
        h = np.random.default_rng(0).normal(size=(4, 60))
        values = [total_correlation(h, h, r) for r in (1e-2, 1e-4, 1e-8)]
        assert values[0] < values[1] < values[2]
        assert abs(values[-1] - 4) < 1e-6

    def test_zero_cross_covariance(self):
        # rows are orthogonal after centring: sin/cos against a constant-free square wave
        t = np.arange(8)
        h1 = np.array([[1, -1, 1, -1, 1, -1, 1, -1]], dtype=float)
        h2 = np.array([[1, 1, -1, -1, 1, 1, -1, -1]], dtype=float)
        assert abs(total_correlation(h1, h2, 1e-4)) < 1e-12
        assert t.size == 8

    def test_matches_independent_svd(self):
        rng = np.random.default_rng(2)
        h1, h2 = correlated_views(rng, 3, 3, 40)
        assert abs(total_correlation(h1, h2, 1e-3) - independent_trace_norm(h1, h2, 1e-3)) < 1e-10

    @settings(max_examples=20, deadline=None)
    @given(st.integers(0, 10_000))
    def test_symmetric(self, seed):
        h1, h2 = correlated_views(np.random.default_rng(seed), 3, 2, 40)
        assert abs(total_correlation(h1, h2) - total_correlation(h2, h1)) < 1e-10

    @settings(max_examples=20, deadline=None)
    @given(st.integers(0, 10_000), st.integers(1, 5))
    def test_bounded_by_dimension(self, seed, o):
        rng = np.random.default_rng(seed)
        assert total_correlation(rng.normal(size=(o, 50)), rng.normal(size=(o, 50)), 0.0) <= o + 1e-9


class TestEstimator:
    def test_fit_transform(self):
        x1, x2 = correlated_views(np.random.default_rng(0), 4, 3, 200)
        model = CCA(n_components=2).fit(x1.T, x2.T)
        z1, z2 = model.transform(x1.T, x2.T)
        assert z1.shape == (200, 2) and z2.shape == (200, 2)
        np.testing.assert_allclose(model.correlations_, cca_fit(x1, x2, 2).correlations)
        assert abs(model.score(x1.T, x2.T) - model.correlations_.sum()) < 1e-8

    def test_params(self):
        model = CCA(n_components=3, reg=0.1)
        assert model.get_params() == {"n_components": 3, "reg": 0.1}
        from sklearn.base import clone

        assert clone(model).get_params() == model.get_params()

    def test_unfitted(self):
        from sklearn.exceptions import NotFittedError

        with pytest.raises(NotFittedError):
            CCA().transform(np.ones((3, 2)))

    def test_no_warnings_on_well_posed_input(self):
        x1, x2 = correlated_views(np.random.default_rng(0), 3, 3, 100)
        with warnings.catch_warnings():
            warnings.simplefilter("error")
            CCA().fit(x1.T, x2.T)
