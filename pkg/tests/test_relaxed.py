"""Tests for the simplified relaxed lasso."""

import numpy as np
import pytest
from scipy.special import expit

from glmpath.cox import SurvivalResponse
from glmpath.exceptions import DataError
from glmpath.families import COX, binomial, gaussian
from glmpath.models import PathOptions, PenaltySpec
from glmpath.path import predict_path
from glmpath.relaxed import active_key, blend, fit_relaxed, predict_relaxed, relaxed_path

TIGHT = PathOptions(tol=1e-14, kkt_tol=1e-12, outer_tol=1e-13, nlambda=30, early_stop=False)


@pytest.fixture
def gaussian_data() -> tuple[np.ndarray, np.ndarray]:
    rng = np.random.default_rng(21)
    X = rng.normal(size=(50, 6))
    return X, 1.0 + X[:, 0] - 2.0 * X[:, 1] + rng.normal(size=50)


class TestBlend:
    def test_midpoint(self):
        np.testing.assert_allclose(blend([2.0, 0.0], [4.0, 1.0], 0.5), [3.0, 0.5])

    def test_gamma_one_is_base(self):
        np.testing.assert_array_equal(blend([2.0, 0.0], [4.0, 1.0], 1.0), [2.0, 0.0])

    def test_gamma_zero_is_refit(self):
        np.testing.assert_array_equal(blend([2.0, 0.0], [4.0, 1.0], 0.0), [4.0, 1.0])

    @pytest.mark.parametrize("gamma", [-0.1, 1.5])
    def test_gamma_range(self, gamma):
        with pytest.raises(DataError, match="gamma must lie in"):
            blend([1.0], [1.0], gamma)

    def test_shape_mismatch(self):
        with pytest.raises(DataError, match="same shape"):
            blend([1.0, 2.0], [1.0], 0.5)


class TestFitRelaxed:
    """Refits on the active sets of a penalized path."""

    def test_gamma_one_returns_base_path(self, gaussian_data):
        X, y = gaussian_data
        fit = fit_relaxed(X, y, gaussian(), options=PathOptions(nlambda=20))
        assert relaxed_path(fit, 1.0) is fit.base
        np.testing.assert_array_equal(predict_relaxed(fit, X, gamma=1.0), predict_path(fit.base, X))

    def test_gamma_zero_is_least_squares_on_active_set(self, gaussian_data):
        X, y = gaussian_data
        fit = fit_relaxed(X, y, gaussian(), options=TIGHT)
        for k in (5, 15, 29):
            key = list(active_key(fit.base, k))
            A = np.column_stack([np.ones(X.shape[0]), X[:, key]])
            ols = np.linalg.lstsq(A, y, rcond=None)[0]
            relaxed = relaxed_path(fit, 0.0)
            assert relaxed.intercepts[k] == pytest.approx(ols[0], abs=1e-6)
            np.testing.assert_allclose(relaxed.beta(k)[key], ols[1:], atol=1e-6)

    def test_empty_active_set_is_null_model(self, gaussian_data):
        X, y = gaussian_data
        fit = fit_relaxed(X, y, gaussian(), options=PathOptions(nlambda=10))
        assert active_key(fit.base, 0) == ()
        assert fit.refit_intercepts[0] == pytest.approx(y.mean())
        assert fit.refit_coefs[:, 0].nnz == 0

    def test_one_refit_per_distinct_active_set(self, gaussian_data):
        X, y = gaussian_data
        fit = fit_relaxed(X, y, gaussian(), options=PathOptions(nlambda=40))
        distinct = {active_key(fit.base, k) for k in range(fit.base.n_lambdas)}
        assert fit.n_refits == len(distinct)
        assert fit.n_refits < fit.base.n_lambdas

    def test_unpenalized_features_are_always_refit(self, gaussian_data):
        X, y = gaussian_data
        fit = fit_relaxed(X, y, gaussian(), penalty=PenaltySpec(penalty_factor=[0.0] + [1.0] * 5), options=PathOptions(nlambda=10))
        assert active_key(fit.base, 0) == (0,)

    def test_large_active_set_falls_back_to_base(self):
        """Test that an active set with at least n features keeps the penalized estimate."""
        rng = np.random.default_rng(3)
        X = rng.normal(size=(8, 20))
        y = rng.normal(size=8)
        fit = fit_relaxed(X, y, gaussian(), penalty=PenaltySpec(alpha=0.05), options=PathOptions(lambdas=[1e-3]))
        assert len(active_key(fit.base, 0)) >= 8
        assert fit.refit_failed[0]
        np.testing.assert_array_equal(fit.refit_coefs.toarray(), fit.base.coefs.toarray())
        assert fit.refit_intercepts[0] == fit.base.intercepts[0]

    def test_threads_do_not_change_results(self, gaussian_data):
        X, y = gaussian_data
        one = fit_relaxed(X, y, gaussian(), options=PathOptions(nlambda=20))
        two = fit_relaxed(X, y, gaussian(), options=PathOptions(nlambda=20, threads=2))
        np.testing.assert_array_equal(one.refit_coefs.toarray(), two.refit_coefs.toarray())
        np.testing.assert_array_equal(one.refit_intercepts, two.refit_intercepts)

    def test_cox_needs_survival_response(self, gaussian_data):
        X, y = gaussian_data
        with pytest.raises(DataError, match="SurvivalResponse"):
            fit_relaxed(X, y, COX)

    def test_cox_refits_have_no_intercept(self):
        rng = np.random.default_rng(4)
        X = rng.normal(size=(40, 3))
        surv = SurvivalResponse.build(rng.exponential(np.exp(-X[:, 0])) + 0.01, (rng.random(40) < 0.8).astype(float))
        fit = fit_relaxed(X, surv, COX, options=PathOptions(nlambda=10))
        np.testing.assert_array_equal(fit.refit_intercepts, 0.0)
        assert not fit.refit_failed.any()


class TestPredictRelaxed:
    """Blending happens on the link scale."""

    @pytest.fixture
    def logistic(self):
        rng = np.random.default_rng(9)
        X = rng.normal(size=(120, 4))
        y = (rng.random(120) < expit(X[:, 0] - X[:, 1])).astype(float)
        return X, fit_relaxed(X, y, binomial(), options=PathOptions(nlambda=15))

    def test_link_is_affine_in_gamma(self, logistic):
        X, fit = logistic
        s = fit.lambdas[8]
        base = predict_relaxed(fit, X, s, gamma=1.0)
        refit = predict_relaxed(fit, X, s, gamma=0.0)
        np.testing.assert_allclose(predict_relaxed(fit, X, s, gamma=0.25), 0.25 * base + 0.75 * refit, atol=1e-12)

    def test_response_is_inverse_link_of_blend(self, logistic):
        X, fit = logistic
        s = fit.lambdas[8]
        eta = predict_relaxed(fit, X, s, gamma=0.5)
        np.testing.assert_allclose(predict_relaxed(fit, X, s, gamma=0.5, type="response"), expit(eta))
