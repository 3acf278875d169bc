"""Regularized Cox proportional hazards models.

Breslow partial likelihood for right-censored and (start, stop] data, optionally
stratified. Risk-set sums are computed from orderings cached on the
:class:`SurvivalResponse`: suffix sums over stop-ordered observations, minus
suffix sums over start-ordered observations when subjects enter late; prefix sums
of d_i / RSS_i over failure times give each observation's share. Ties sort failures
before censorings, an observation is at risk at its own stop time, and a start time
equal to a failure time means not at risk.

Observation weights multiply each subject's contribution; d_i is the weighted death
mass at failure time t_i.
"""

import logging
from dataclasses import dataclass, replace
from typing import Any

import numpy as np
import pandas as pd
from scipy.special import xlogy

from .data import FeatureMatrix, FloatArray, IntArray, check_weights, normalize_weights
from .exceptions import DataError, FitError
from .families import COX
from .models import PathOptions, PenaltySpec, ResolvedPenalty
from .path import PathFit, as_feature_matrix, coef_path, refit_unpenalized, run_path

logger = logging.getLogger(__name__)

DEFAULT_STRATUM = "all"


# ------------------------------------------------------------------ #
# Response
# ------------------------------------------------------------------ #


@dataclass(frozen=True)
class _Stratum:
    label: str
    index: IntArray
    stop_order: IntArray
    start_order: IntArray
    failure_times: FloatArray
    deaths: IntArray
    death_slot: IntArray
    stop_pos: IntArray
    start_pos: IntArray
    stop_count: IntArray
    start_count: IntArray


def _build_stratum(label: str, index: IntArray, start: FloatArray, stop: FloatArray, status: IntArray) -> _Stratum:
    T, S0, st = stop[index], start[index], status[index]
    # ascending stop, failures before censorings at equal times
    stop_order = np.lexsort((-st, T)).astype(np.intp)
    start_order = np.argsort(S0, kind="stable").astype(np.intp)
    deaths = np.flatnonzero(st == 1).astype(np.intp)
    failure_times = np.unique(T[deaths])
    return _Stratum(
        label=label,
        index=index,
        stop_order=stop_order,
        start_order=start_order,
        failure_times=failure_times,
        deaths=deaths,
        death_slot=np.searchsorted(failure_times, T[deaths]).astype(np.intp),
        stop_pos=np.searchsorted(T[stop_order], failure_times, side="left").astype(np.intp),
        start_pos=np.searchsorted(S0[start_order], failure_times, side="left").astype(np.intp),
        stop_count=np.searchsorted(failure_times, T, side="right").astype(np.intp),
        start_count=np.searchsorted(failure_times, S0, side="right").astype(np.intp),
    )


@dataclass(frozen=True)
class SurvivalResponse:
    """Survival outcome with per-stratum orderings computed once at construction."""

    start: FloatArray
    stop: FloatArray
    status: IntArray
    strata: np.ndarray
    groups: tuple[_Stratum, ...]

    @classmethod
    def build(cls, stop: Any, status: Any, start: Any = None, strata: Any = None) -> "SurvivalResponse":
        stop = np.asarray(stop, dtype=np.float64).ravel()
        n = stop.size
        if n == 0:
            raise DataError("Survival response is empty")
        start = np.zeros(n) if start is None else np.asarray(start, dtype=np.float64).ravel()
        raw_status = np.asarray(status, dtype=np.float64).ravel()
        if start.shape != (n,) or raw_status.shape != (n,):
            raise DataError("start, stop and status must have the same length")
        for name, arr in (("start", start), ("stop", stop)):
            if not np.all(np.isfinite(arr)):
                raise DataError(f"Non-finite {name} time", row=int(np.argmax(~np.isfinite(arr))))
        if np.any(start < 0):
            raise DataError("Start times must be nonnegative", row=int(np.argmax(start < 0)))
        if np.any(stop <= start):
            raise DataError("Stop time must exceed start time", row=int(np.argmax(stop <= start)))
        if not np.all(np.isin(raw_status, (0.0, 1.0))):
            raise DataError("Status must be 0 or 1", row=int(np.argmax(~np.isin(raw_status, (0.0, 1.0)))))
        status = raw_status.astype(np.intp)

        labels = np.full(n, DEFAULT_STRATUM, dtype=object) if strata is None else np.asarray(strata).astype(str)
        if labels.shape != (n,):
            raise DataError("Strata must have one label per observation")
        groups = tuple(
            _build_stratum(str(label), np.flatnonzero(labels == label).astype(np.intp), start, stop, status)
            for label in np.unique(labels)
        )
        return cls(start=start, stop=stop, status=status, strata=labels.astype(str), groups=groups)

    @property
    def n(self) -> int:
        return int(self.stop.size)

    @property
    def has_entry(self) -> bool:
        """True when some subject enters after time 0."""
        return bool(np.any(self.start > 0))

    @property
    def n_failures(self) -> int:
        return int(self.status.sum())

    @property
    def stratum_labels(self) -> list[str]:
        return [g.label for g in self.groups]

    def take(self, rows: Any) -> "SurvivalResponse":
        rows = np.asarray(rows)
        return SurvivalResponse.build(self.stop[rows], self.status[rows], self.start[rows], self.strata[rows])


def risk_at(surv: SurvivalResponse, j: int, t: float, stratum: str | None = None) -> bool:
    """Whether observation ``j`` is at risk at time ``t`` (in ``stratum`` when given)."""
    if stratum is not None and surv.strata[j] != stratum:
        return False
    return bool(surv.start[j] < t <= surv.stop[j])


# ------------------------------------------------------------------ #
# Risk-set sums and derivatives
# ------------------------------------------------------------------ #


@dataclass(frozen=True)
class CoxDerivatives:
    """Score, negated Hessian diagonal and working response of the log partial likelihood."""

    grad: FloatArray
    wdiag: FloatArray
    z: FloatArray


def _weights(surv: SurvivalResponse, weights: Any) -> FloatArray:
    return check_weights(weights, surv.n)


def _risk_sums(g: _Stratum, e: FloatArray, w: FloatArray, entry: bool) -> tuple[FloatArray, FloatArray]:
    """Weighted death mass d_i and scaled risk-set sums RSS_i at the stratum's failure times."""
    d = np.bincount(g.death_slot, weights=w[g.deaths], minlength=g.failure_times.size)
    suffix = np.concatenate([np.cumsum(e[g.stop_order][::-1])[::-1], [0.0]])
    rss = suffix[g.stop_pos]
    if entry:
        late = np.concatenate([np.cumsum(e[g.start_order][::-1])[::-1], [0.0]])
        rss = rss - late[g.start_pos]
    return d, rss


def _ratio(d: FloatArray, denom: FloatArray) -> FloatArray:
    out = np.zeros_like(d)
    np.divide(d, denom, out=out, where=(d > 0) & (denom > 0))
    return out


def _derivatives(surv: SurvivalResponse, eta: Any, weights: Any, entry: bool) -> CoxDerivatives:
    eta = np.asarray(eta, dtype=np.float64).ravel()
    if eta.shape != (surv.n,):
        raise DataError(f"Linear predictor must have length {surv.n}")
    w_all = _weights(surv, weights)
    grad = np.zeros(surv.n)
    wdiag = np.zeros(surv.n)
    for g in surv.groups:
        eta_g = eta[g.index]
        w = w_all[g.index]
        st = surv.status[g.index]
        if g.failure_times.size == 0:
            continue
        e = w * np.exp(eta_g - eta_g.max())
        d, rss = _risk_sums(g, e, w, entry)
        cum1 = np.concatenate([[0.0], np.cumsum(_ratio(d, rss))])
        cum2 = np.concatenate([[0.0], np.cumsum(_ratio(d, rss**2))])
        rsk = cum1[g.stop_count]
        rsksq = cum2[g.stop_count]
        if entry:
            rsk = rsk - cum1[g.start_count]
            rsksq = rsksq - cum2[g.start_count]
        grad[g.index] = w * st - e * rsk
        wdiag[g.index] = e * rsk - e**2 * rsksq
    wdiag = np.where(wdiag > 0.0, wdiag, 0.0)
    z = eta.copy()
    live = wdiag > 0
    z[live] += grad[live] / wdiag[live]
    return CoxDerivatives(grad=grad, wdiag=wdiag, z=z)


def cox_derivatives_rc(surv: SurvivalResponse, eta: Any, weights: Any = None) -> CoxDerivatives:
    """Derivatives for right-censored data (every start time 0)."""
    if surv.has_entry:
        raise DataError("Right-censored derivatives require all start times to be 0")
    return _derivatives(surv, eta, weights, entry=False)


def cox_derivatives_ss(surv: SurvivalResponse, eta: Any, weights: Any = None) -> CoxDerivatives:
    """Derivatives for (start, stop] data.

    Risk-set sums subtract the subjects that have not yet entered; per-observation
    sums subtract the failure times at or before the subject's entry.
    """
    return _derivatives(surv, eta, weights, entry=True)


def cox_derivatives(surv: SurvivalResponse, eta: Any, weights: Any = None) -> CoxDerivatives:
    if surv.has_entry:
        return cox_derivatives_ss(surv, eta, weights)
    return cox_derivatives_rc(surv, eta, weights)


# ------------------------------------------------------------------ #
# Likelihood and deviance
# ------------------------------------------------------------------ #


def _log_likelihood(surv: SurvivalResponse, eta: FloatArray, w_all: FloatArray) -> tuple[float, float]:
    """(log partial likelihood, saturated log likelihood)."""
    entry = surv.has_entry
    loglik = 0.0
    saturated = 0.0
    for g in surv.groups:
        if g.failure_times.size == 0:
            continue
        eta_g = eta[g.index]
        w = w_all[g.index]
        shift = float(eta_g.max())
        e = w * np.exp(eta_g - shift)
        d, rss = _risk_sums(g, e, w, entry)
        pos = d > 0
        loglik += float(np.sum(w[g.deaths] * eta_g[g.deaths])) - float(np.sum(d[pos] * (np.log(rss[pos]) + shift)))
        saturated -= float(np.sum(xlogy(d, d)))
    return loglik, saturated


def neg_log_partial_likelihood(surv: SurvivalResponse, eta: Any, weights: Any = None) -> float:
    """(2/n) times the negative Breslow log partial likelihood, summed over strata."""
    eta = np.asarray(eta, dtype=np.float64).ravel()
    if eta.shape != (surv.n,) or not np.all(np.isfinite(eta)):
        raise DataError(f"Linear predictor must be finite with length {surv.n}")
    loglik, _ = _log_likelihood(surv, eta, _weights(surv, weights))
    return -2.0 * loglik / surv.n


def cox_deviance(surv: SurvivalResponse, eta: Any, weights: Any = None) -> float:
    """2 (saturated - fitted) log partial likelihood."""
    eta = np.asarray(eta, dtype=np.float64).ravel()
    loglik, saturated = _log_likelihood(surv, eta, _weights(surv, weights))
    return 2.0 * (saturated - loglik)


class CoxLikelihood:
    """Path-engine adapter: no intercept, working quantities from :func:`cox_derivatives`."""

    def __init__(self, surv: SurvivalResponse, weights: FloatArray) -> None:
        self.surv = surv
        self.weights = weights
        self.n = surv.n

    def initial_intercept(self) -> float:
        return 0.0

    def working(self, eta: FloatArray) -> tuple[FloatArray, FloatArray]:
        d = cox_derivatives(self.surv, eta, self.weights)
        return d.z, d.wdiag

    def deviance(self, eta: FloatArray) -> float:
        if not np.all(np.isfinite(eta)):
            return np.inf
        with np.errstate(over="ignore", invalid="ignore"):
            value = cox_deviance(self.surv, eta, self.weights)
        return value if np.isfinite(value) else np.inf


# ------------------------------------------------------------------ #
# Path fitting
# ------------------------------------------------------------------ #


def _cox_inputs(
    X: Any, surv: SurvivalResponse, weights: Any, penalty: PenaltySpec | None
) -> tuple[FeatureMatrix, CoxLikelihood, ResolvedPenalty]:
    X = as_feature_matrix(X)
    if surv.n != X.n_rows:
        raise DataError(f"Survival response has {surv.n} rows but the design matrix has {X.n_rows}")
    w = normalize_weights(check_weights(weights, X.n_rows))
    if not np.any((surv.status == 1) & (w > 0)):
        raise DataError("Cox model needs at least one failure with positive weight")
    spec = penalty or PenaltySpec()
    if spec.intercept:
        spec = spec.model_copy(update={"intercept": False})
    return X, CoxLikelihood(surv, w), spec.resolve(X.n_cols)


def fit_cox_path(
    X: Any,
    surv: SurvivalResponse,
    weights: Any = None,
    penalty: PenaltySpec | None = None,
    options: PathOptions | None = None,
) -> PathFit:
    """Elastic-net path for the (stratified) Cox model.

    The returned fit carries Breslow baseline hazards for every fitted lambda so
    survival curves can be produced without the training data.
    """
    X, lik, resolved = _cox_inputs(X, surv, weights, penalty)
    logger.info(
        "Fitting Cox path",
        extra={
            "n": X.n_rows,
            "p": X.n_cols,
            "failures": surv.n_failures,
            "strata": len(surv.groups),
            "entry": surv.has_entry,
        },
    )
    fit = run_path(X, lik, COX, resolved, options or PathOptions(), center=True)
    return replace(fit, baseline=tuple(baseline_hazard(fit, X, surv, weights=weights)))


def refit_cox(
    X: FeatureMatrix, surv: SurvivalResponse, weights: Any, penalty: ResolvedPenalty, columns: IntArray, options: PathOptions
) -> tuple[float, FloatArray, bool]:
    """Unpenalized Cox fit on a column subset."""
    lik = CoxLikelihood(surv, normalize_weights(check_weights(weights, surv.n)))
    return refit_unpenalized(X, lik, penalty, columns, options, center=True)


# ------------------------------------------------------------------ #
# Baseline hazard and survival curves
# ------------------------------------------------------------------ #


@dataclass(frozen=True)
class BaselineHazard:
    """Breslow increments at a stratum's failure times, one row per lambda."""

    stratum: str
    failure_times: FloatArray
    increments: FloatArray

    def cumulative(self, k: int = 0) -> FloatArray:
        return np.cumsum(self.increments[k])


def baseline_hazard(
    fit: PathFit, X: Any, surv: SurvivalResponse, s: Any = None, weights: Any = None
) -> list[BaselineHazard]:
    """Breslow baseline hazard per stratum at each requested lambda (default: the fitted path)."""
    X = as_feature_matrix(X)
    if X.n_cols != fit.n_features or X.n_rows != surv.n:
        raise DataError("Design matrix does not match the fit and survival response")
    w_all = _weights(surv, weights)
    _, betas = coef_path(fit, s)
    etas = np.asarray(X.matvec(betas), dtype=np.float64).reshape(X.n_rows, -1)
    out = []
    for g in surv.groups:
        rows = np.zeros((etas.shape[1], g.failure_times.size))
        w = w_all[g.index]
        for k in range(etas.shape[1]):
            eta_g = etas[g.index, k]
            shift = float(eta_g.max())
            d, rss = _risk_sums(g, w * np.exp(eta_g - shift), w, surv.has_entry)
            rows[k] = _ratio(d, rss) * np.exp(-shift)
        out.append(BaselineHazard(stratum=g.label, failure_times=g.failure_times.copy(), increments=rows))
    return out


@dataclass(frozen=True)
class SurvivalCurve:
    """Right-continuous survival step function for one new observation."""

    row: int
    stratum: str
    times: FloatArray
    survival: FloatArray

    def at(self, t: Any) -> FloatArray:
        """S(t); 1 before the first failure time."""
        t = np.atleast_1d(np.asarray(t, dtype=np.float64))
        pos = np.searchsorted(self.times, t, side="right")
        values = np.concatenate([[1.0], self.survival])
        return values[pos]


def survival_curve(
    fit: PathFit,
    new_x: Any,
    s: float,
    strata: Any = None,
    hazards: list[BaselineHazard] | None = None,
) -> list[SurvivalCurve]:
    """S(t | x) = exp(-Lambda_0(t) exp(x' beta)) at lambda ``s`` for each row of ``new_x``.

    ``hazards`` must hold a single lambda row computed at ``s`` (see
    :func:`baseline_hazard`); when omitted, ``s`` must be one of the fitted
    lambdas and the baselines stored on the fit are used.
    """
    if not fit.is_cox:
        raise FitError("Survival curves require a Cox fit")
    X = as_feature_matrix(new_x)
    if X.n_cols != fit.n_features:
        raise DataError(f"New data has {X.n_cols} columns, expected {fit.n_features}")
    k = 0
    if hazards is None:
        hits = np.flatnonzero(fit.lambdas == s)
        if hits.size == 0 or not fit.baseline:
            raise FitError(
                "Lambda is not on the fitted path; recompute the baseline from the original data",
                lambda_value=float(s),
            )
        hazards, k = list(fit.baseline), int(hits[0])
    by_label = {h.stratum: h for h in hazards}

    if strata is None:
        if len(by_label) > 1:
            raise DataError("Stratum of each new observation is required for a stratified model")
        labels = np.full(X.n_rows, next(iter(by_label)), dtype=object)
    else:
        labels = np.asarray(strata).astype(str)
        if labels.shape != (X.n_rows,):
            raise DataError("Strata must have one label per new observation")
    _, beta = coef_path(fit, [s])
    risk = np.exp(np.asarray(X.matvec(beta[:, 0]), dtype=np.float64))

    curves = []
    for i in range(X.n_rows):
        label = str(labels[i])
        if label not in by_label:
            raise DataError(f"Unknown stratum '{label}'", row=i)
        h = by_label[label]
        cum = h.cumulative(k)
        curves.append(SurvivalCurve(row=i, stratum=label, times=h.failure_times, survival=np.exp(-cum * risk[i])))
    return curves


def curves_frame(curves: list[SurvivalCurve]) -> pd.DataFrame:
    """Long-format table with columns time, survival, stratum, row."""
    frames = [
        pd.DataFrame({"time": c.times, "survival": c.survival, "stratum": c.stratum, "row": c.row}) for c in curves
    ]
    if not frames:
        return pd.DataFrame(columns=["time", "survival", "stratum", "row"])
    return pd.concat(frames, ignore_index=True)
