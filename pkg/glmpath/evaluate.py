"""Cross-validation, performance measures, ROC curves and confusion matrices.

All measures take link-scale predictions. Cross-validation refits the path on
each training split over the lambda grid of the full-data fit and scores the
held-out (pre-validated) predictions fold by fold; ``cvm`` is the mean of the
fold scores and ``cvsd`` their standard error. These standard errors ignore
the correlation between folds and tend to be too small.
"""

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Any

import numpy as np
import pandas as pd
from scipy.stats import rankdata

from .cox import SurvivalResponse, cox_deviance, fit_cox_path
from .data import FeatureMatrix, FloatArray, IntArray, check_weights
from .exceptions import ConfigError, DataError, FamilyError, FitError
from .families import CoxFamily, Family, FamilySpec
from .models import PathOptions, PenaltySpec
from .path import PathFit, as_feature_matrix, coef_path, fit_glm_path, predict_path
from .relaxed import DEFAULT_GAMMAS, RelaxedFit, fit_relaxed, predict_relaxed, relax_path, relaxed_path

logger = logging.getLogger(__name__)

MEASURES = ("deviance", "mse", "mae", "class", "auc", "C-index")
MAXIMIZED = frozenset({"auc", "C-index"})
_ALIASES = {"C": "C-index", "c-index": "C-index", "cindex": "C-index"}


# ------------------------------------------------------------------ #
# Measures
# ------------------------------------------------------------------ #


def measure_name(name: str) -> str:
    name = _ALIASES.get(name, name)
    if name not in MEASURES:
        raise ConfigError(f"Unknown measure '{name}'. Available: {', '.join(MEASURES)}")
    return name


def valid_measures(family: Family) -> tuple[str, ...]:
    if isinstance(family, CoxFamily):
        return ("deviance", "C-index")
    if family.is_binomial:
        return ("deviance", "mse", "mae", "class", "auc")
    return ("deviance", "mse", "mae")


def _check_measure(name: str, family: Family) -> str:
    name = measure_name(name)
    if name not in valid_measures(family):
        raise FamilyError(f"Measure '{name}' is not defined for family {family.name}")
    return name


def auc(scores: Any, labels: Any) -> float:
    """Mann-Whitney estimate of P(score_pos > score_neg), ties counted one half."""
    scores = np.asarray(scores, dtype=np.float64).ravel()
    labels = np.asarray(labels).ravel()
    pos = labels == 1
    n1, n0 = int(pos.sum()), int((~pos).sum())
    if n1 == 0 or n0 == 0:
        raise DataError("AUC needs both classes")
    ranks = rankdata(scores)
    return float((ranks[pos].sum() - n1 * (n1 + 1) / 2.0) / (n1 * n0))


def roc_curve(scores: Any, labels: Any) -> tuple[FloatArray, FloatArray]:
    """False and true positive rates as the threshold sweeps from +inf to -inf."""
    scores = np.asarray(scores, dtype=np.float64).ravel()
    labels = np.asarray(labels).ravel()
    if scores.shape != labels.shape:
        raise DataError("Scores and labels must have the same length")
    pos = labels == 1
    n1, n0 = int(pos.sum()), int((~pos).sum())
    if n1 == 0 or n0 == 0:
        raise DataError("ROC curve needs both classes")
    order = np.argsort(-scores, kind="stable")
    s, p = scores[order], pos[order]
    tp = np.cumsum(p)
    fp = np.cumsum(~p)
    # one point per distinct threshold
    last = np.r_[np.flatnonzero(np.diff(s) != 0), s.size - 1]
    fpr = np.r_[0.0, fp[last] / n0]
    tpr = np.r_[0.0, tp[last] / n1]
    return fpr, tpr


def concordance(eta: Any, surv: SurvivalResponse) -> float:
    """Harrell's C: over comparable pairs within a stratum, the share where the earlier failure has the higher risk.

    Pair (i, j) is comparable when i fails and j is still at risk at i's failure
    time with a later stop (or the same stop, censored). Tied risks count one half.
    """
    eta = np.asarray(eta, dtype=np.float64).ravel()
    if eta.shape != (surv.n,):
        raise DataError(f"Predictions must have length {surv.n}")
    concordant = 0.0
    comparable = 0
    for g in surv.groups:
        idx = g.index
        e, stop, start, st = eta[idx], surv.stop[idx], surv.start[idx], surv.status[idx]
        for i in np.flatnonzero(st == 1):
            t = stop[i]
            later = (stop > t) | ((stop == t) & (st == 0))
            ok = later & (start < t)
            comparable += int(ok.sum())
            concordant += float(np.sum(e[i] > e[ok])) + 0.5 * float(np.sum(e[i] == e[ok]))
    if comparable == 0:
        raise DataError("No comparable pairs for the concordance index")
    return concordant / comparable


def _glm_column(name: str, family: FamilySpec, eta: FloatArray, y: FloatArray, w: FloatArray) -> float:
    mu = family.linkinv(eta)
    if name == "deviance":
        return float(w @ family.deviance_residuals(y, family.clamp_mu(mu)) / w.sum())
    if name == "mse":
        return float(w @ (y - mu) ** 2 / w.sum())
    if name == "mae":
        return float(w @ np.abs(y - mu) / w.sum())
    if name == "class":
        return float(w @ ((mu >= 0.5) != (y > 0.5)) / w.sum())
    return auc(eta, (y > 0.5).astype(int))


def measure(pred: Any, response: Any, family: Family, type: str = "deviance", weights: Any = None) -> FloatArray | float:
    """Score link-scale predictions; a matrix is scored column by column."""
    name = _check_measure(type, family)
    pred = np.asarray(pred, dtype=np.float64)
    matrix = pred.ndim == 2
    cols = pred if matrix else pred[:, None]
    if isinstance(family, CoxFamily):
        if not isinstance(response, SurvivalResponse):
            raise DataError("Cox measures need a SurvivalResponse")
        w = check_weights(weights, response.n)
        if cols.shape[0] != response.n:
            raise DataError(f"Predictions have {cols.shape[0]} rows, expected {response.n}")
        if name == "deviance":
            out = np.array([cox_deviance(response, cols[:, k], w) / w.sum() for k in range(cols.shape[1])])
        else:
            out = np.array([concordance(cols[:, k], response) for k in range(cols.shape[1])])
    else:
        y = np.asarray(response, dtype=np.float64).ravel()
        if cols.shape[0] != y.size:
            raise DataError(f"Predictions have {cols.shape[0]} rows, expected {y.size}")
        w = check_weights(weights, y.size)
        out = np.array([_glm_column(name, family, cols[:, k], y, w) for k in range(cols.shape[1])])
    return out if matrix else float(out[0])


def assess(
    fit: PathFit | RelaxedFit,
    new_x: Any,
    response: Any,
    s: Any = None,
    gamma: float = 1.0,
    weights: Any = None,
) -> pd.DataFrame:
    """Every measure valid for the fit's family, one row per lambda in ``s``."""
    base = fit.base if isinstance(fit, RelaxedFit) else fit
    lambdas = base.lambdas if s is None else np.atleast_1d(np.asarray(s, dtype=np.float64))
    if isinstance(fit, RelaxedFit):
        eta = predict_relaxed(fit, new_x, lambdas, gamma)
    else:
        eta = predict_path(fit, new_x, lambdas)
    table: dict[str, Any] = {"lambda": lambdas}
    for name in valid_measures(base.family):
        try:
            table[name] = measure(eta, response, base.family, name, weights)
        except DataError as e:
            logger.warning("Measure skipped", extra={"measure": name, "reason": str(e)})
            table[name] = np.full(lambdas.size, np.nan)
    return pd.DataFrame(table)


# ------------------------------------------------------------------ #
# Confusion matrix
# ------------------------------------------------------------------ #


@dataclass(frozen=True)
class ConfusionMatrix:
    labels: list[str]
    table: IntArray

    @property
    def total(self) -> int:
        return int(self.table.sum())

    @property
    def percent_correct(self) -> float:
        return float(np.trace(self.table)) / self.total

    def render(self) -> str:
        """Predicted classes down the rows, true classes across the columns, with totals."""
        k = len(self.labels)
        body = [[str(v) for v in row] + [str(int(row.sum()))] for row in self.table]
        body.append([str(int(v)) for v in self.table.sum(axis=0)] + [str(self.total)])
        header = list(self.labels) + ["Total"]
        names = list(self.labels) + ["Total"]
        widths = [max(len(header[c]), *(len(r[c]) for r in body)) for c in range(k + 1)]
        stub = max(len("Predicted"), *(4 + len(n) for n in names))
        lines = [" " * (stub - len("Predicted") + 9) + " True"]
        lines.append("Predicted".ljust(stub) + " " + " ".join(h.rjust(wd) for h, wd in zip(header, widths, strict=True)))
        for name, row in zip(names, body, strict=True):
            lines.append(("    " + name).ljust(stub) + " " + " ".join(v.rjust(wd) for v, wd in zip(row, widths, strict=True)))
        lines.append("")
        lines.append(f" Percent Correct:  {self.percent_correct:.4g} ")
        return "\n".join(lines)


def confusion_matrix(pred_class: Any, true_class: Any) -> ConfusionMatrix:
    pred = np.asarray(pred_class).ravel()
    true = np.asarray(true_class).ravel()
    if pred.size == 0:
        raise DataError("Confusion matrix needs at least one observation")
    if pred.shape != true.shape:
        raise DataError("Predicted and true classes must have the same length")
    labels = np.unique(np.concatenate([pred, true]))
    p_idx = np.searchsorted(labels, pred)
    t_idx = np.searchsorted(labels, true)
    table = np.zeros((labels.size, labels.size), dtype=np.intp)
    np.add.at(table, (p_idx, t_idx), 1)
    return ConfusionMatrix(labels=[_label(v) for v in labels], table=table)


def _label(value: Any) -> str:
    if isinstance(value, float | np.floating) and float(value).is_integer():
        return str(int(value))
    return str(value)


# ------------------------------------------------------------------ #
# Cross-validation
# ------------------------------------------------------------------ #


def make_folds(n: int, k: int, seed: int = 0) -> IntArray:
    """0-based fold ids: a seeded permutation dealt round-robin into ``k`` folds."""
    if not 2 <= k <= n:
        raise ConfigError(f"Number of folds must be between 2 and n={n}, got {k}")
    rng = np.random.default_rng(seed)
    ids = np.empty(n, dtype=np.intp)
    ids[rng.permutation(n)] = np.arange(n) % k
    return ids


@dataclass(frozen=True)
class CvResult:
    measure: str
    lambdas: FloatArray
    cvm: FloatArray
    cvsd: FloatArray
    lambda_min: float
    lambda_1se: float
    fold_ids: IntArray
    skipped_folds: list[int]
    fit: PathFit | RelaxedFit
    nfolds: int
    seed: int
    gamma_grid: tuple[float, ...] | None = None
    gamma_min: float | None = None
    gamma_1se: float | None = None
    fit_preval: FloatArray | None = None

    @property
    def base(self) -> PathFit:
        return self.fit.base if isinstance(self.fit, RelaxedFit) else self.fit

    def plot_frame(self) -> pd.DataFrame:
        """CV curve at gamma = 1 (or the plain fit): log(lambda), cvm, cvm +/- cvsd, nonzero count."""
        row = _unrelaxed_row(self.gamma_grid)
        m = self.base.lambdas.size
        nzero = np.asarray(self.base.df()[:m])
        cvm, cvsd = self.cvm[row], self.cvsd[row]
        return pd.DataFrame(
            {
                "log_lambda": np.log(self.lambdas),
                "cvm": cvm,
                "cvup": cvm + cvsd,
                "cvlo": cvm - cvsd,
                "nzero": nzero,
            }
        )


def _unrelaxed_row(gammas: tuple[float, ...] | None) -> int:
    """Row of the gamma = 1 (plain path) curve."""
    if not gammas:
        return 0
    return gammas.index(1.0) if 1.0 in gammas else len(gammas) - 1


def _select(
    cvm: FloatArray, cvsd: FloatArray, lambdas: FloatArray, gammas: tuple[float, ...], maximize: bool
) -> tuple[int, int, int, int]:
    """(gamma row, lambda col) of the best cell and of the one-standard-error choice.

    Ties keep the largest lambda, then the largest gamma. The 1se cell is the
    largest lambda (then largest gamma) whose score is within one standard
    error of the best.
    """
    score = -cvm if maximize else cvm
    score = np.where(np.isfinite(score), score, np.inf)
    best = float(score.min())
    g_min = l_min = -1
    for col in range(lambdas.size):
        rows = np.flatnonzero(score[:, col] == best)
        if rows.size:
            g_min, l_min = int(_largest_gamma(rows, gammas)), col
            break
    thresh = best + float(cvsd[g_min, l_min])
    for col in range(lambdas.size):
        rows = np.flatnonzero(score[:, col] <= thresh)
        if rows.size:
            return g_min, l_min, int(_largest_gamma(rows, gammas)), col
    return g_min, l_min, g_min, l_min


def _largest_gamma(rows: IntArray, gammas: tuple[float, ...]) -> int:
    return int(rows[np.argmax(np.asarray(gammas)[rows])])


def _degenerate(family: Family, response: Any, rows: IntArray) -> str | None:
    if isinstance(family, CoxFamily):
        if not np.any(response.status[rows] == 1):
            return "no failures"
        return None
    if family.is_binomial:
        y = np.asarray(response)[rows] > 0.5
        if y.all() or not y.any():
            return "single class"
    return None


def _take(response: Any, rows: IntArray) -> Any:
    if isinstance(response, SurvivalResponse):
        return response.take(rows)
    return np.asarray(response, dtype=np.float64).ravel()[rows]


def _fold_predictions(
    X: FeatureMatrix,
    response: Any,
    family: Family,
    w: FloatArray,
    penalty: PenaltySpec | None,
    options: PathOptions,
    lambdas: FloatArray,
    train: IntArray,
    test: IntArray,
    gammas: tuple[float, ...] | None,
) -> list[FloatArray]:
    """Held-out link-scale predictions at every grid lambda, one matrix per gamma."""
    X_train, y_train = X.take_rows(train), _take(response, train)
    fold_options = options.model_copy(
        update={"lambdas": [float(v) for v in lambdas], "threads": 1, "early_stop": False}
    )
    if isinstance(family, CoxFamily):
        fold_fit = fit_cox_path(X_train, y_train, w[train], penalty, fold_options)
    else:
        fold_fit = fit_glm_path(X_train, y_train, family, w[train], penalty, fold_options)
    X_test = X.take_rows(test)
    if gammas is None:
        return [predict_path(fold_fit, X_test, lambdas)]
    relaxed = relax_path(fold_fit, X_train, y_train, w[train], fold_options, gammas)
    return [predict_relaxed(relaxed, X_test, lambdas, g) for g in gammas]


def cv_fit(
    X: Any,
    response: Any,
    family: Family,
    weights: Any = None,
    penalty: PenaltySpec | None = None,
    options: PathOptions | None = None,
    nfolds: int = 10,
    measure_type: str = "deviance",
    seed: int = 0,
    keep: bool = False,
    relax: bool = False,
    gamma_grid: tuple[float, ...] = DEFAULT_GAMMAS,
    fold_ids: Any = None,
) -> CvResult:
    """K-fold cross-validation over the lambda grid of the full-data fit.

    Folds whose held-out or training part lacks a class (binomial) or a failure
    (Cox) are skipped and reported in ``skipped_folds``.
    """
    X = as_feature_matrix(X)
    options = options or PathOptions()
    name = _check_measure(measure_type, family)
    n = X.n_rows
    w = check_weights(weights, n)
    if fold_ids is None:
        ids = make_folds(n, nfolds, seed)
    else:
        ids = np.asarray(fold_ids, dtype=np.intp).ravel()
        if ids.shape != (n,) or ids.min() < 0:
            raise ConfigError("Fold ids must be nonnegative with one entry per observation")
        nfolds = int(ids.max()) + 1
    gammas = tuple(gamma_grid) if relax else None

    full: PathFit | RelaxedFit
    if relax:
        full = fit_relaxed(X, response, family, w, penalty, options, tuple(gamma_grid))
        lambdas = full.base.lambdas
    else:
        full = (
            fit_cox_path(X, response, w, penalty, options)
            if isinstance(family, CoxFamily)
            else fit_glm_path(X, response, family, w, penalty, options)
        )
        lambdas = full.lambdas
    logger.info("Cross-validating", extra={"nfolds": nfolds, "measure": name, "n_lambdas": lambdas.size, "relax": relax})

    usable: list[int] = []
    skipped: list[int] = []
    for f in range(nfolds):
        test = np.flatnonzero(ids == f)
        train = np.flatnonzero(ids != f)
        reason = None if test.size else "empty"
        reason = reason or _degenerate(family, response, test) or _degenerate(family, response, train)
        if reason:
            logger.warning("Skipping fold", extra={"fold": f, "reason": reason})
            skipped.append(f)
        else:
            usable.append(f)
    if len(usable) < 2:
        raise FitError("Fewer than two usable folds", usable=len(usable), skipped=skipped)

    def run(f: int) -> list[FloatArray]:
        return _fold_predictions(
            X, response, family, w, penalty, options, lambdas, np.flatnonzero(ids != f), np.flatnonzero(ids == f), gammas
        )

    if options.threads > 1:
        with ThreadPoolExecutor(max_workers=options.threads) as pool:
            fold_preds = list(pool.map(run, usable))
    else:
        fold_preds = [run(f) for f in usable]

    n_gamma = len(gammas) if gammas else 1
    scores = np.empty((len(usable), n_gamma, lambdas.size))
    preval = np.full((n, lambdas.size), np.nan) if keep else None
    for i, (f, preds) in enumerate(zip(usable, fold_preds, strict=True)):
        test = np.flatnonzero(ids == f)
        held_out = _take(response, test)
        for g, eta in enumerate(preds):
            scores[i, g] = measure(eta, held_out, family, name, w[test])
        if preval is not None:
            preval[test] = preds[_unrelaxed_row(gammas)]

    cvm = scores.mean(axis=0)
    cvsd = scores.std(axis=0, ddof=1) / np.sqrt(len(usable))
    g_min, l_min, g_1se, l_1se = _select(cvm, cvsd, lambdas, gammas or (1.0,), name in MAXIMIZED)
    return CvResult(
        measure=name,
        lambdas=lambdas,
        cvm=cvm,
        cvsd=cvsd,
        lambda_min=float(lambdas[l_min]),
        lambda_1se=float(lambdas[l_1se]),
        fold_ids=ids,
        skipped_folds=skipped,
        fit=full,
        nfolds=nfolds,
        seed=seed,
        gamma_grid=gammas,
        gamma_min=None if gammas is None else float(gammas[g_min]),
        gamma_1se=None if gammas is None else float(gammas[g_1se]),
        fit_preval=preval,
    )


def coef_at_selection(result: CvResult, which: str = "lambda.1se") -> tuple[float, FloatArray]:
    """Intercept and coefficients of the full-data fit at ``lambda.min`` or ``lambda.1se``.

    Relaxed results are blended at the matching selected gamma.
    """
    if which not in ("lambda.min", "lambda.1se"):
        raise ConfigError(f"Unknown selection '{which}'")
    lam = result.lambda_min if which == "lambda.min" else result.lambda_1se
    path = result.base
    if isinstance(result.fit, RelaxedFit):
        gamma = result.gamma_min if which == "lambda.min" else result.gamma_1se
        path = relaxed_path(result.fit, 1.0 if gamma is None else gamma)
    b0, beta = coef_path(path, [lam])
    return float(b0[0]), beta[:, 0]


__all__ = [
    "ConfusionMatrix",
    "CvResult",
    "MEASURES",
    "assess",
    "auc",
    "coef_at_selection",
    "concordance",
    "confusion_matrix",
    "cv_fit",
    "make_folds",
    "measure",
    "measure_name",
    "roc_curve",
]
