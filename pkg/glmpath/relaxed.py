"""Simplified relaxed lasso.

Each distinct active set along the penalized path is refit without penalty
(box constraints still apply); the relaxed estimate at mixing ``gamma`` is
``gamma * penalized + (1 - gamma) * refit``.
"""

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from typing import Any

import numpy as np
import numpy.typing as npt
import scipy.sparse as sp

from .cox import CoxLikelihood, SurvivalResponse, fit_cox_path
from .data import FeatureMatrix, FloatArray, check_weights, normalize_weights
from .exceptions import DataError, FamilyError, FitError
from .families import CoxFamily, Family, FamilySpec
from .models import PathOptions, PenaltySpec
from .path import (
    GlmLikelihood,
    Likelihood,
    PathFit,
    PredictType,
    as_feature_matrix,
    fit_glm_path,
    predict_path,
    refit_unpenalized,
)

logger = logging.getLogger(__name__)

DEFAULT_GAMMAS = (0.0, 0.25, 0.5, 0.75, 1.0)

ActiveKey = tuple[int, ...]


@dataclass(frozen=True)
class Refit:
    intercept: float
    beta: FloatArray
    ok: bool


@dataclass(frozen=True)
class RelaxedFit:
    """A penalized path plus the unpenalized refit on each lambda's active set."""

    base: PathFit
    refit_intercepts: FloatArray
    refit_coefs: sp.csc_matrix
    refit_failed: npt.NDArray[np.bool_]
    n_refits: int
    gamma_grid: tuple[float, ...] = DEFAULT_GAMMAS

    @property
    def lambdas(self) -> FloatArray:
        return self.base.lambdas


def blend(base_beta: Any, refit_beta: Any, gamma: float) -> FloatArray:
    """gamma * base + (1 - gamma) * refit."""
    if not 0.0 <= gamma <= 1.0:
        raise DataError(f"gamma must lie in [0, 1], got {gamma}")
    base_beta = np.asarray(base_beta, dtype=np.float64)
    refit_beta = np.asarray(refit_beta, dtype=np.float64)
    if base_beta.shape != refit_beta.shape:
        raise DataError("Base and refit coefficients must have the same shape")
    if gamma == 1.0:
        return base_beta.copy()
    return gamma * base_beta + (1.0 - gamma) * refit_beta


def active_key(fit: PathFit, k: int) -> ActiveKey:
    """Sorted indices of nonzero features plus always-included unpenalized ones."""
    keep = np.zeros(fit.n_features, dtype=bool)
    keep[fit.active_set(k)] = True
    keep |= (fit.penalty.gamma == 0) & ~fit.standardization.excluded
    return tuple(int(j) for j in np.flatnonzero(keep))


def _null_refit(family: Family, y: FloatArray | None, w: FloatArray, intercept: bool, p: int) -> Refit:
    if isinstance(family, CoxFamily) or not intercept or y is None:
        return Refit(0.0, np.zeros(p), True)
    mean = float(w @ y / w.sum())
    mu = family.clamp_mu(np.array([mean]))
    return Refit(float(family.link(mu)[0]), np.zeros(p), True)


def _refit(
    X: FeatureMatrix,
    lik: Likelihood,
    fit: PathFit,
    key: ActiveKey,
    options: PathOptions,
    y: FloatArray | None,
) -> Refit:
    p = fit.n_features
    if not key:
        return _null_refit(fit.family, y, lik.weights, fit.penalty.intercept, p)
    if len(key) >= X.n_rows:
        logger.warning("Refit skipped: active set is not smaller than n", extra={"size": len(key), "n": X.n_rows})
        return Refit(0.0, np.zeros(p), False)
    try:
        b0, beta, ok = refit_unpenalized(
            X, lik, fit.penalty, np.asarray(key, dtype=np.intp), options, center=fit.is_cox or fit.penalty.intercept
        )
    except (FitError, FamilyError) as e:
        logger.warning("Refit failed", extra={"size": len(key), "error": str(e)})
        return Refit(0.0, np.zeros(p), False)
    if not ok:
        logger.warning("Refit did not converge; using the penalized estimate", extra={"size": len(key)})
    return Refit(b0, beta, ok)


def relax_path(
    fit: PathFit,
    X: Any,
    response: Any,
    weights: Any = None,
    options: PathOptions | None = None,
    gamma_grid: tuple[float, ...] = DEFAULT_GAMMAS,
) -> RelaxedFit:
    """Refit every distinct active set of ``fit``; duplicate sets share one refit."""
    X = as_feature_matrix(X)
    options = options or PathOptions()
    w = normalize_weights(check_weights(weights, X.n_rows))
    y: FloatArray | None = None
    lik: Likelihood
    if isinstance(fit.family, CoxFamily):
        if not isinstance(response, SurvivalResponse):
            raise DataError("Cox refits need a SurvivalResponse")
        lik = CoxLikelihood(response, w)
    else:
        y = np.asarray(response, dtype=np.float64).ravel()
        lik = GlmLikelihood(fit.family, y, w)
    if fit.penalty.alpha < 1.0:
        logger.warning("Relaxing an elastic-net path with alpha < 1", extra={"alpha": fit.penalty.alpha})

    keys = [active_key(fit, k) for k in range(fit.n_lambdas)]
    distinct = list(dict.fromkeys(keys))
    if options.threads > 1 and len(distinct) > 1:
        with ThreadPoolExecutor(max_workers=options.threads) as pool:
            results = list(pool.map(lambda key: _refit(X, lik, fit, key, options, y), distinct))
    else:
        results = [_refit(X, lik, fit, key, options, y) for key in distinct]
    cache: dict[ActiveKey, Refit] = dict(zip(distinct, results, strict=True))
    logger.info("Relaxed refits done", extra={"n_lambdas": fit.n_lambdas, "n_refits": len(cache)})

    intercepts = np.empty(fit.n_lambdas)
    cols = []
    failed = np.zeros(fit.n_lambdas, dtype=bool)
    for k, key in enumerate(keys):
        refit = cache[key]
        if refit.ok:
            intercepts[k] = refit.intercept
            cols.append(refit.beta)
        else:
            failed[k] = True
            intercepts[k] = fit.intercepts[k]
            cols.append(fit.beta(k))
    coefs = sp.csc_matrix(np.column_stack(cols))
    coefs.eliminate_zeros()
    coefs.sort_indices()
    return RelaxedFit(
        base=fit,
        refit_intercepts=intercepts,
        refit_coefs=coefs,
        refit_failed=failed,
        n_refits=len(cache),
        gamma_grid=tuple(gamma_grid),
    )


def fit_relaxed(
    X: Any,
    response: Any,
    family: Family,
    weights: Any = None,
    penalty: PenaltySpec | None = None,
    options: PathOptions | None = None,
    gamma_grid: tuple[float, ...] = DEFAULT_GAMMAS,
) -> RelaxedFit:
    """Penalized path followed by unpenalized refits on its active sets.

    ``response`` is the outcome vector for GLM families or a
    :class:`SurvivalResponse` for Cox.
    """
    X = as_feature_matrix(X)
    if isinstance(family, FamilySpec):
        base = fit_glm_path(X, response, family, weights, penalty, options)
    else:
        if not isinstance(response, SurvivalResponse):
            raise DataError("Cox models need a SurvivalResponse")
        base = fit_cox_path(X, response, weights, penalty, options)
    return relax_path(base, X, response, weights, options, gamma_grid)


def relaxed_path(fit: RelaxedFit, gamma: float) -> PathFit:
    """The blended path at ``gamma`` as an ordinary :class:`PathFit`."""
    if gamma == 1.0:
        return fit.base
    base = fit.base
    coefs = sp.csc_matrix(blend(base.coefs.toarray(), fit.refit_coefs.toarray(), gamma))
    coefs.eliminate_zeros()
    coefs.sort_indices()
    return replace(base, intercepts=blend(base.intercepts, fit.refit_intercepts, gamma), coefs=coefs)


def predict_relaxed(
    fit: RelaxedFit, new_x: Any, s: Any = None, gamma: float = 1.0, type: PredictType = "link"
) -> FloatArray:
    """Predictions from the blended coefficients; blending happens on the link scale."""
    return predict_path(relaxed_path(fit, gamma), new_x, s, type)
