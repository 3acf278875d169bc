"""Elastic-net regularization paths.

The path engine is shared by GLM and Cox fits: it only needs a likelihood that
can produce IRLS working responses and weights at a linear predictor and report
the deviance. Each lambda is solved by an outer IRLS loop around the penalized
WLS solver, warm-started from the previous solution, with step-halving when a
Newton step would increase the penalized objective.
"""

import logging
from dataclasses import dataclass, field
from typing import Any, Literal, Protocol

import numpy as np
import numpy.typing as npt
import pandas as pd
import scipy.sparse as sp

from .data import (
    FeatureMatrix,
    FloatArray,
    IntArray,
    Standardization,
    check_weights,
    normalize_weights,
)
from .exceptions import ConfigError, DataError, FamilyError, FitError
from .families import CoxFamily, Family, FamilySpec
from .models import PathOptions, PenaltySpec, ResolvedPenalty
from .pwls import StandardizedDesign, WlsProblem, solve_pwls

logger = logging.getLogger(__name__)

ALPHA_FLOOR = 1e-3
EARLY_STOP_MIN_LAMBDAS = 5
EARLY_STOP_DEV_CHANGE = 1e-5
EARLY_STOP_DEV_RATIO = 0.999
OBJECTIVE_SLACK = 1e-12

PredictType = Literal["link", "response", "class"]


class Likelihood(Protocol):
    """What the path engine needs from a model family."""

    n: int
    weights: FloatArray

    def initial_intercept(self) -> float: ...

    def working(self, eta: FloatArray) -> tuple[FloatArray, FloatArray]: ...

    def deviance(self, eta: FloatArray) -> float: ...


class GlmLikelihood:
    """IRLS pieces of a GLM family for a fixed response and (normalized) weights."""

    def __init__(self, family: FamilySpec, y: FloatArray, weights: FloatArray) -> None:
        self.family = family
        self.y = y
        self.weights = weights
        self.n = int(y.size)

    def initial_intercept(self) -> float:
        return self.family.initialize(self.y, self.weights)[1]

    def working(self, eta: FloatArray) -> tuple[FloatArray, FloatArray]:
        return self.family.irls_working(self.y, eta, self.weights)

    def deviance(self, eta: FloatArray) -> float:
        """Deviance at ``eta``; ``inf`` outside the link's domain."""
        if not self.family.valid_eta(eta):
            return np.inf
        with np.errstate(all="ignore"):
            mu = self.family.linkinv(eta)
        if not np.all(np.isfinite(mu)):
            return np.inf
        try:
            return self.family.deviance(self.y, self.family.clamp_mu(mu), self.weights)
        except FamilyError:
            return np.inf


# ------------------------------------------------------------------ #
# Fit container
# ------------------------------------------------------------------ #


@dataclass(frozen=True)
class PathFit:
    """Solutions along a decreasing lambda sequence, on the original column scale.

    ``coefs`` is a p x m sparse matrix; column k holds the coefficients at
    ``lambdas[k]``.
    """

    family: Family
    lambdas: FloatArray
    intercepts: FloatArray
    coefs: sp.csc_matrix
    dev_ratio: FloatArray
    null_deviance: float
    penalty: ResolvedPenalty
    standardization: Standardization
    n_obs: int
    converged: npt.NDArray[np.bool_]
    n_passes: IntArray = field(default_factory=lambda: np.zeros(0, dtype=np.intp))
    lambda_max: float | None = None
    truncated: bool = False
    baseline: tuple[Any, ...] = ()

    @property
    def is_cox(self) -> bool:
        return isinstance(self.family, CoxFamily)

    @property
    def n_features(self) -> int:
        return int(self.coefs.shape[0])

    @property
    def n_lambdas(self) -> int:
        return int(self.lambdas.size)

    def beta(self, k: int) -> FloatArray:
        """Dense coefficient vector at ``lambdas[k]``."""
        return np.asarray(self.coefs[:, k].toarray()).ravel()

    def active_set(self, k: int) -> IntArray:
        lo, hi = self.coefs.indptr[k], self.coefs.indptr[k + 1]
        return np.sort(self.coefs.indices[lo:hi]).astype(np.intp)

    def df(self) -> IntArray:
        """Number of nonzero coefficients at each lambda."""
        return np.diff(self.coefs.indptr).astype(np.intp)


# ------------------------------------------------------------------ #
# Lambda sequence and objective
# ------------------------------------------------------------------ #


def default_min_ratio(n: int, p: int) -> float:
    return 1e-2 if p > n else 1e-4


def lambda_sequence(lam_max: float, nlambda: int = 100, min_ratio: float = 1e-4) -> FloatArray:
    """Log-spaced sequence from ``lam_max`` down to ``min_ratio * lam_max``."""
    if lam_max <= 0:
        raise FitError("lambda_max must be positive", lambda_max=lam_max)
    if not 0.0 < min_ratio < 1.0:
        raise ConfigError(f"lambda_min_ratio must lie in (0, 1), got {min_ratio}")
    if nlambda < 1:
        raise ConfigError(f"nlambda must be at least 1, got {nlambda}")
    if nlambda == 1:
        return np.array([lam_max])
    return np.geomspace(lam_max, lam_max * min_ratio, nlambda)


def _penalty_value(beta: FloatArray, lam: float, penalty: ResolvedPenalty) -> float:
    return lam * float(penalty.gamma @ ((1.0 - penalty.alpha) / 2.0 * beta**2 + penalty.alpha * np.abs(beta)))


def _objective(lik: Likelihood, eta: FloatArray, beta: FloatArray, lam: float, penalty: ResolvedPenalty) -> float:
    dev = lik.deviance(eta)
    if not np.isfinite(dev):
        return np.inf
    return dev / (2.0 * lik.n) + _penalty_value(beta, lam, penalty)


def objective(
    family: FamilySpec,
    y: Any,
    eta: Any,
    beta: Any,
    lam: float,
    penalty: ResolvedPenalty,
    weights: Any = None,
) -> float:
    """Penalized objective deviance/(2n) + lambda * P(beta) with weights normalized to sum n.

    ``beta`` is taken as given; pass standardized coefficients to reproduce the
    solver's objective.
    """
    y = np.asarray(y, dtype=np.float64)
    eta = np.asarray(eta, dtype=np.float64)
    w = normalize_weights(check_weights(weights, y.size))
    value = _objective(GlmLikelihood(family, y, w), eta, np.asarray(beta, dtype=np.float64), lam, penalty)
    if not np.isfinite(value):
        raise FitError("Objective is not finite at the supplied linear predictor")
    return value


# ------------------------------------------------------------------ #
# IRLS at one lambda
# ------------------------------------------------------------------ #


@dataclass(frozen=True)
class _LambdaSolution:
    intercept: float
    beta: FloatArray
    eta: FloatArray
    deviance: float
    objective: float
    converged: bool
    diverged: bool
    n_passes: int
    n_outer: int


def _solve_lambda(
    design: StandardizedDesign,
    lik: Likelihood,
    penalty: ResolvedPenalty,
    lam: float,
    lam_prev: float | None,
    intercept: float,
    beta: FloatArray,
    options: PathOptions,
    kkt_tol: float,
    allowed: npt.NDArray[np.bool_] | None = None,
    use_intercept: bool | None = None,
) -> _LambdaSolution:
    eta = design.linear_predictor(intercept, beta)
    obj = _objective(lik, eta, beta, lam, penalty)
    dev = lik.deviance(eta)
    passes = 0
    hint = np.flatnonzero(beta != 0)

    for outer in range(1, options.max_outer + 1):
        z, w = lik.working(eta)
        result = solve_pwls(
            WlsProblem(
                design=design,
                z=z,
                w=w,
                penalty=penalty,
                lam=lam,
                lam_prev=lam_prev,
                beta=beta,
                intercept=intercept,
                active_hint=hint,
                allowed=allowed,
                use_intercept=use_intercept,
            ),
            tol=options.tol,
            max_passes=options.max_passes,
            kkt_tol=kkt_tol,
            screening=options.screening,
        )
        passes += result.n_passes
        new_b0, new_beta = result.intercept, result.beta
        new_eta = design.linear_predictor(new_b0, new_beta)
        new_obj = _objective(lik, new_eta, new_beta, lam, penalty)

        halvings = 0
        limit = obj + OBJECTIVE_SLACK * max(1.0, abs(obj)) if np.isfinite(obj) else np.inf
        while not new_obj <= limit and halvings < options.max_halvings:
            new_b0 = 0.5 * (intercept + new_b0)
            new_beta = 0.5 * (beta + new_beta)
            new_eta = design.linear_predictor(new_b0, new_beta)
            new_obj = _objective(lik, new_eta, new_beta, lam, penalty)
            halvings += 1
        if not new_obj <= limit:
            logger.warning(
                "IRLS step could not decrease the objective after step-halving",
                extra={"lambda": lam, "halvings": halvings},
            )
            return _LambdaSolution(intercept, beta, eta, dev, obj, False, True, passes, outer)
        if halvings:
            logger.debug("IRLS step halved", extra={"lambda": lam, "halvings": halvings})
        logger.debug("IRLS iterate", extra={"lambda": lam, "n_outer": outer, "objective": new_obj})

        new_dev = lik.deviance(new_eta)
        change = abs(new_dev - dev) / (0.1 + abs(new_dev))
        intercept, beta, eta, obj, dev = new_b0, new_beta, new_eta, new_obj, new_dev
        hint = np.flatnonzero(beta != 0)
        lam_prev = lam
        if change < options.outer_tol and result.converged:
            return _LambdaSolution(intercept, beta, eta, dev, obj, True, False, passes, outer)

    logger.warning("IRLS did not converge", extra={"lambda": lam, "max_outer": options.max_outer})
    return _LambdaSolution(intercept, beta, eta, dev, obj, False, False, passes, options.max_outer)


def _null_fit(
    design: StandardizedDesign,
    lik: Likelihood,
    penalty: ResolvedPenalty,
    options: PathOptions,
    unpenalized: npt.NDArray[np.bool_],
) -> _LambdaSolution:
    """Fit of the intercept plus the unpenalized features, with the penalized ones at 0."""
    b0 = lik.initial_intercept() if penalty.intercept else 0.0
    beta = np.zeros(design.p)
    if not penalty.intercept and not unpenalized.any():
        eta = design.linear_predictor(0.0, beta)
        dev = lik.deviance(eta)
        return _LambdaSolution(0.0, beta, eta, dev, dev / (2.0 * lik.n), True, False, 0, 0)
    return _solve_lambda(design, lik, penalty, 0.0, None, b0, beta, options, options.kkt_tol, allowed=unpenalized)


def _lambda_max_from(
    design: StandardizedDesign,
    lik: Likelihood,
    penalty: ResolvedPenalty,
    start: _LambdaSolution,
) -> float:
    penalized = (penalty.gamma > 0) & ~design.std.excluded
    if not penalized.any():
        raise FitError("lambda_max is undefined: every feature is unpenalized or constant")
    z, w = lik.working(start.eta)
    grad = design.kernel(w, z - start.eta).full_gradient()
    alpha = max(penalty.alpha, ALPHA_FLOOR)
    return float(np.max(np.abs(grad[penalized]) / (alpha * penalty.gamma[penalized])))


# ------------------------------------------------------------------ #
# Path engine
# ------------------------------------------------------------------ #


def as_feature_matrix(X: Any) -> FeatureMatrix:
    if isinstance(X, FeatureMatrix):
        return X
    if sp.issparse(X):
        return FeatureMatrix.sparse(X)
    return FeatureMatrix.dense(X)


def _prepare(
    X: FeatureMatrix, lik: Likelihood, penalty: ResolvedPenalty, center: bool
) -> tuple[StandardizedDesign, npt.NDArray[np.bool_]]:
    design = StandardizedDesign.build(X, lik.weights, penalty.standardize, center)
    unpenalized = (penalty.gamma == 0) & ~design.std.excluded
    return design, unpenalized


def run_path(
    X: FeatureMatrix,
    lik: Likelihood,
    family: Family,
    penalty: ResolvedPenalty,
    options: PathOptions,
    center: bool,
) -> PathFit:
    """Fit the whole path for ``lik``; ``center`` selects column centering."""
    design, unpenalized = _prepare(X, lik, penalty, center)
    start = _null_fit(design, lik, penalty, options, unpenalized)
    null = _null_fit(design, lik, penalty, options, np.zeros(design.p, dtype=bool)) if unpenalized.any() else start
    null_dev = null.deviance
    if not np.isfinite(null_dev):
        raise FitError("Null deviance is not finite")

    lam_max: float | None
    if options.lambdas is None:
        lam_max = _lambda_max_from(design, lik, penalty, start)
        ratio = options.lambda_min_ratio or default_min_ratio(design.n, design.p)
        lambdas = lambda_sequence(lam_max, options.nlambda, ratio)
    else:
        lambdas = np.asarray(options.lambdas, dtype=np.float64)
        try:
            lam_max = _lambda_max_from(design, lik, penalty, start)
        except FitError:
            lam_max = None
    kkt_tol = options.kkt_tol * (lam_max if lam_max else 1.0)

    intercept, beta = start.intercept, start.beta.copy()
    lam_prev: float | None = lam_max if lam_max is not None and lam_max >= lambdas[0] else None
    b0s: list[float] = []
    cols: list[FloatArray] = []
    ratios: list[float] = []
    conv: list[bool] = []
    passes: list[int] = []
    truncated = False

    for k, lam in enumerate(lambdas):
        if lam_max is not None and lam >= lam_max and penalty.alpha >= ALPHA_FLOOR:
            # every penalized coefficient is zero here by definition of lambda_max
            sol = start
        else:
            sol = _solve_lambda(design, lik, penalty, float(lam), lam_prev, intercept, beta, options, kkt_tol)
        if sol.diverged:
            truncated = True
            logger.warning("Path truncated at last good lambda", extra={"lambda": float(lam), "index": k})
            break
        intercept, beta, lam_prev = sol.intercept, sol.beta, float(lam)
        b0_orig, beta_orig = design.to_original(intercept, beta)
        if not penalty.intercept:
            b0_orig = 0.0
        ratio = 1.0 - sol.deviance / null_dev if null_dev > 0 else 0.0
        b0s.append(b0_orig)
        cols.append(beta_orig)
        ratios.append(ratio)
        conv.append(sol.converged)
        passes.append(sol.n_passes)
        logger.debug(
            "Solved lambda",
            extra={"index": k, "lambda": float(lam), "df": int(np.count_nonzero(beta)), "dev_ratio": ratio},
        )
        if options.early_stop and _should_stop(ratios):
            logger.info("Path stopped early", extra={"n_lambdas": k + 1, "dev_ratio": ratio})
            break

    if not cols:
        raise FitError("IRLS diverged at the first lambda", lambda_value=float(lambdas[0]))
    m = len(cols)
    coefs = sp.csc_matrix(np.column_stack(cols))
    coefs.eliminate_zeros()
    coefs.sort_indices()
    return PathFit(
        family=family,
        lambdas=lambdas[:m].copy(),
        intercepts=np.asarray(b0s),
        coefs=coefs,
        dev_ratio=np.asarray(ratios),
        null_deviance=float(null_dev),
        penalty=penalty,
        standardization=design.std,
        n_obs=design.n,
        converged=np.asarray(conv, dtype=bool),
        n_passes=np.asarray(passes, dtype=np.intp),
        lambda_max=lam_max,
        truncated=truncated,
    )


def _should_stop(ratios: list[float]) -> bool:
    if ratios[-1] > EARLY_STOP_DEV_RATIO:
        return True
    if len(ratios) < EARLY_STOP_MIN_LAMBDAS:
        return False
    return ratios[-1] - ratios[-2] < EARLY_STOP_DEV_CHANGE * ratios[-1]


def refit_unpenalized(
    X: FeatureMatrix,
    lik: Likelihood,
    penalty: ResolvedPenalty,
    columns: IntArray,
    options: PathOptions,
    center: bool,
) -> tuple[float, FloatArray, bool]:
    """Unpenalized fit on ``columns`` (box constraints kept); coefficients are length p.

    Returns ``(intercept, beta, converged)`` on the original column scale.
    """
    p = penalty.n_features
    full = np.zeros(p)
    sub_penalty = penalty.subset(columns)
    design = StandardizedDesign.build(X.take_columns(columns), lik.weights, penalty.standardize, center)
    b0 = lik.initial_intercept() if penalty.intercept else 0.0
    sol = _solve_lambda(
        design, lik, sub_penalty, 0.0, None, b0, np.zeros(columns.size), options, options.kkt_tol
    )
    b0_orig, beta_orig = design.to_original(sol.intercept, sol.beta)
    if not penalty.intercept:
        b0_orig = 0.0
    full[columns] = beta_orig
    return b0_orig, full, sol.converged and not sol.diverged


# ------------------------------------------------------------------ #
# GLM entry points
# ------------------------------------------------------------------ #


def _glm_inputs(
    X: Any, y: Any, family: FamilySpec, weights: Any, penalty: PenaltySpec | None
) -> tuple[FeatureMatrix, GlmLikelihood, ResolvedPenalty]:
    X = as_feature_matrix(X)
    y = np.asarray(y, dtype=np.float64).ravel()
    if y.size != X.n_rows:
        raise DataError(f"Response has {y.size} rows but the design matrix has {X.n_rows}")
    if X.n_rows < 2:
        raise DataError("At least two observations are required")
    family.check_response(y)
    w = normalize_weights(check_weights(weights, X.n_rows))
    resolved = (penalty or PenaltySpec()).resolve(X.n_cols)
    return X, GlmLikelihood(family, y, w), resolved


def lambda_max(
    X: Any, y: Any, family: FamilySpec, weights: Any = None, penalty: PenaltySpec | None = None
) -> float:
    """Smallest lambda at which every penalized coefficient is zero."""
    X, lik, resolved = _glm_inputs(X, y, family, weights, penalty)
    design, unpenalized = _prepare(X, lik, resolved, resolved.intercept)
    start = _null_fit(design, lik, resolved, PathOptions(), unpenalized)
    return _lambda_max_from(design, lik, resolved, start)


def fit_glm_path(
    X: Any,
    y: Any,
    family: FamilySpec,
    weights: Any = None,
    penalty: PenaltySpec | None = None,
    options: PathOptions | None = None,
) -> PathFit:
    """Elastic-net path for a GLM family.

    Args:
        X: n x p design (array, scipy sparse matrix or :class:`FeatureMatrix`)
        y: response of length n (0/1 or proportions for binomial families)
        family: the GLM family
        weights: nonnegative observation weights, normalized internally to sum n
        penalty: penalty specification (defaults to the lasso)
        options: lambda sequence and solver controls

    Returns:
        The fitted path on the original column scale.
    """
    X, lik, resolved = _glm_inputs(X, y, family, weights, penalty)
    options = options or PathOptions()
    logger.info(
        "Fitting GLM path",
        extra={"family": family.name, "link": family.link_name, "n": X.n_rows, "p": X.n_cols, "alpha": resolved.alpha},
    )
    return run_path(X, lik, family, resolved, options, center=resolved.intercept)


# ------------------------------------------------------------------ #
# Coefficients and prediction
# ------------------------------------------------------------------ #


def _interpolation(lambdas: FloatArray, s: FloatArray) -> tuple[IntArray, IntArray, FloatArray]:
    """Neighbouring path indices and the weight of the larger-lambda neighbour for each s."""
    m = lambdas.size
    if np.any(s > lambdas[0]):
        logger.warning(
            "Requested lambda above the largest fitted lambda; using the first solution",
            extra={"lambda_first": float(lambdas[0])},
        )
    s = np.clip(s, lambdas[-1], lambdas[0])
    left = np.clip(np.sum(lambdas[None, :] >= s[:, None], axis=1) - 1, 0, m - 1)
    right = np.minimum(left + 1, m - 1)
    frac = np.ones(s.size)
    inner = right != left
    gap = lambdas[left[inner]] - lambdas[right[inner]]
    frac[inner] = (s[inner] - lambdas[right[inner]]) / gap
    return left.astype(np.intp), right.astype(np.intp), frac


def coef_path(fit: PathFit, s: Any = None) -> tuple[FloatArray, FloatArray]:
    """Intercepts (length k) and coefficients (p x k) at the requested lambdas.

    Between fitted lambdas coefficients are linearly interpolated; outside the
    fitted range the nearest end of the path is used.
    """
    if s is None:
        return fit.intercepts.copy(), np.asarray(fit.coefs.toarray())
    s = np.atleast_1d(np.asarray(s, dtype=np.float64))
    if np.any(~np.isfinite(s)) or np.any(s < 0):
        raise DataError("Requested lambdas must be finite and nonnegative")
    left, right, frac = _interpolation(fit.lambdas, s)
    dense = fit.coefs.toarray()
    betas = dense[:, left] * frac + dense[:, right] * (1.0 - frac)
    b0 = fit.intercepts[left] * frac + fit.intercepts[right] * (1.0 - frac)
    return b0, betas


def predict_path(fit: PathFit, new_x: Any, s: Any = None, type: PredictType = "link") -> FloatArray:
    """Predictions as an n_new x k matrix, one column per requested lambda."""
    X = as_feature_matrix(new_x)
    if X.n_cols != fit.n_features:
        raise DataError(f"New data has {X.n_cols} columns, expected {fit.n_features}")
    b0, betas = coef_path(fit, s)
    eta = np.asarray(X.matvec(betas), dtype=np.float64).reshape(X.n_rows, -1) + b0
    return transform_link(fit.family, eta, type)


def transform_link(family: Family, eta: FloatArray, type: PredictType) -> FloatArray:
    if type == "link":
        return eta
    if isinstance(family, CoxFamily):
        if type == "response":
            return np.exp(eta)
        raise FamilyError("Cox models support prediction types 'link' and 'response' only")
    if type == "response":
        return family.linkinv(eta)
    if type == "class":
        if not family.is_binomial:
            raise FamilyError("Class predictions are only defined for binomial families", family=family.name)
        return (family.linkinv(eta) >= 0.5).astype(np.float64)
    raise FamilyError(f"Unknown prediction type: {type}")


def path_summary(fit: PathFit) -> pd.DataFrame:
    """Degrees of freedom, percent deviance explained and lambda along the path."""
    return pd.DataFrame(
        {
            "Df": fit.df(),
            "%Dev": np.round(100.0 * fit.dev_ratio, 2),
            "Lambda": fit.lambdas,
        }
    )


__all__ = [
    "GlmLikelihood",
    "Likelihood",
    "PathFit",
    "coef_path",
    "default_min_ratio",
    "fit_glm_path",
    "lambda_max",
    "lambda_sequence",
    "objective",
    "path_summary",
    "predict_path",
    "refit_unpenalized",
    "run_path",
    "transform_link",
]
