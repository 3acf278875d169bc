"""Command-line interface: fit, cv, predict, assess and survcurve."""

import argparse
import json
import logging
import sys
from collections.abc import Callable
from pathlib import Path
from typing import Any

import numpy as np
import pandas as pd
from pydantic import ValidationError

from . import __version__
from .config import LOG_LEVELS, Settings
from .cox import SurvivalResponse, baseline_hazard, curves_frame, fit_cox_path, survival_curve
from .evaluate import MEASURES, assess, confusion_matrix, cv_fit, measure, roc_curve, valid_measures
from .exceptions import ConfigError, DataError, FamilyError, GlmPathError
from .families import COX, CoxFamily, Family, parse_family
from .io import (
    Dataset,
    ResponseSpec,
    cv_document,
    dump_document,
    fit_from_document,
    ingest_csv,
    model_document,
    read_document,
    read_response,
    write_atomic,
    write_csv,
)
from .models import CvDocument, ModelDocument, PathOptions, PenaltySpec
from .path import PathFit, PredictType, fit_glm_path, path_summary, predict_path
from .relaxed import DEFAULT_GAMMAS, RelaxedFit, fit_relaxed, predict_relaxed

logger = logging.getLogger(__name__)

Handler = Callable[[argparse.Namespace, Settings], int]


# ------------------------------------------------------------------ #
# Flag parsing helpers
# ------------------------------------------------------------------ #


def _float_list(text: str, flag: str) -> list[float]:
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise ConfigError(f"{flag} expects comma-separated numbers, got '{text}'", flag=flag) from None


def _bounds(text: str | None, flag: str) -> float | list[float | None] | None:
    """A scalar or a comma-separated list; empty or +/-inf entries mean unbounded."""
    if text is None:
        return None
    parts = [v.strip() for v in text.split(",")]
    try:
        values = [None if v == "" or v.lower() in ("inf", "-inf", "+inf") else float(v) for v in parts]
    except ValueError:
        raise ConfigError(f"{flag} expects a number or comma-separated numbers, got '{text}'", flag=flag) from None
    return values[0] if len(values) == 1 and values[0] is not None else values


def _family(text: str) -> Family:
    if text.strip().lower() == COX.name:
        return COX
    return parse_family(text)


def _response_spec(args: argparse.Namespace, features: list[str] | None = None) -> ResponseSpec:
    return ResponseSpec(
        response=getattr(args, "response", None),
        time=getattr(args, "time", None),
        start=getattr(args, "start", None),
        status=getattr(args, "status", None),
        strata=getattr(args, "strata", None),
        weights=getattr(args, "weights", None),
        features=features,
    )


def _penalty(args: argparse.Namespace) -> PenaltySpec:
    return PenaltySpec(
        alpha=args.alpha,
        penalty_factor=_float_list(args.penalty_factors, "--penalty-factors") if args.penalty_factors else None,
        lower=_bounds(args.lower, "--lower"),
        upper=_bounds(args.upper, "--upper"),
        standardize=not args.no_standardize,
        intercept=not args.no_intercept,
    )


def _options(args: argparse.Namespace, settings: Settings) -> PathOptions:
    return PathOptions(
        nlambda=args.nlambda,
        lambda_min_ratio=args.lambda_min_ratio,
        lambdas=_float_list(args.lambdas, "--lambda") if args.lambdas else None,
        tol=settings.tol,
        max_passes=settings.max_passes,
        threads=args.threads or settings.threads,
    )


def _load_training(args: argparse.Namespace, family: Family) -> Dataset:
    data = ingest_csv(args.data, _response_spec(args), sparse=args.sparse)
    if isinstance(family, CoxFamily) and not isinstance(data.response, SurvivalResponse):
        raise ConfigError("Cox models need --time and --status")
    if not isinstance(family, CoxFamily) and isinstance(data.response, SurvivalResponse):
        raise ConfigError("--time/--status are only valid with --family cox")
    return data


def _fit(data: Dataset, family: Family, penalty: PenaltySpec, options: PathOptions, relax: bool) -> PathFit | RelaxedFit:
    if relax:
        return fit_relaxed(data.X, data.response, family, data.weights, penalty, options)
    if isinstance(family, CoxFamily):
        assert isinstance(data.response, SurvivalResponse)
        return fit_cox_path(data.X, data.response, data.weights, penalty, options)
    return fit_glm_path(data.X, data.response, family, data.weights, penalty, options)


# ------------------------------------------------------------------ #
# Loaded models and lambda aliases
# ------------------------------------------------------------------ #


class LoadedModel:
    """A model or CV document with its lambda aliases resolved."""

    def __init__(self, doc: ModelDocument | CvDocument) -> None:
        self.doc = doc
        model = doc.model if isinstance(doc, CvDocument) else doc
        self.feature_names = model.feature_names
        self.fit = fit_from_document(model)
        self.aliases: dict[str, float] = {"lambda.max": model.lambdas[0]}
        if isinstance(doc, CvDocument):
            self.aliases["lambda.min"] = doc.lambda_min
            self.aliases["lambda.1se"] = doc.lambda_1se

    @property
    def base(self) -> PathFit:
        return self.fit.base if isinstance(self.fit, RelaxedFit) else self.fit

    @property
    def default_gamma(self) -> float:
        if isinstance(self.doc, CvDocument) and self.doc.gamma_1se is not None:
            return self.doc.gamma_1se
        return 1.0

    def resolve(self, text: str | None) -> list[tuple[str, float]]:
        """(label, lambda) pairs for an --s value; the default depends on the document kind."""
        if text is None:
            if isinstance(self.doc, CvDocument):
                return [("lambda.1se", self.aliases["lambda.1se"])]
            return [(repr(float(v)), float(v)) for v in self.base.lambdas]
        out = []
        for token in (t.strip() for t in text.split(",") if t.strip()):
            if token in self.aliases:
                out.append((token, self.aliases[token]))
                continue
            if token in ("lambda.min", "lambda.1se"):
                raise ConfigError(f"'{token}' is only available for cross-validation documents")
            try:
                value = float(token)
            except ValueError:
                raise ConfigError(f"--s expects numbers or lambda.min/lambda.1se/lambda.max, got '{token}'") from None
            if value < 0:
                raise ConfigError("--s values must be nonnegative")
            out.append((token, value))
        return out

    def gammas(self, text: str | None) -> list[float]:
        gammas = _float_list(text, "--gamma") if text else [self.default_gamma]
        if any(not 0.0 <= g <= 1.0 for g in gammas):
            raise ConfigError("--gamma values must lie in [0, 1]")
        if any(g != 1.0 for g in gammas) and not isinstance(self.fit, RelaxedFit):
            raise ConfigError("gamma < 1 needs a model fitted with --relax")
        return gammas

    def predict(self, X: Any, s: list[float], gamma: float, type: PredictType = "link") -> np.ndarray:
        if isinstance(self.fit, RelaxedFit):
            return predict_relaxed(self.fit, X, s, gamma, type)
        return predict_path(self.fit, X, s, type)


def _new_data(args: argparse.Namespace, model: LoadedModel, require_response: bool = False) -> Dataset:
    spec = _response_spec(args, features=model.feature_names)
    return ingest_csv(args.data, spec, sparse=args.sparse, require_response=require_response)


# ------------------------------------------------------------------ #
# Commands
# ------------------------------------------------------------------ #


def cmd_fit(args: argparse.Namespace, settings: Settings) -> int:
    family = _family(args.family)
    data = _load_training(args, family)
    fit = _fit(data, family, _penalty(args), _options(args, settings), args.relax)
    write_atomic(args.out, dump_document(model_document(fit, data.feature_names)))
    base = fit.base if isinstance(fit, RelaxedFit) else fit
    logger.info(
        "Model written",
        extra={"path": args.out, "n_lambdas": base.n_lambdas, "truncated": base.truncated},
    )
    if args.summary:
        sys.stdout.write(path_summary(base).to_string(index=False) + "\n")
    return 0


def cmd_cv(args: argparse.Namespace, settings: Settings) -> int:
    family = _family(args.family)
    data = _load_training(args, family)
    gamma_grid = tuple(_float_list(args.gamma_grid, "--gamma-grid")) if args.gamma_grid else DEFAULT_GAMMAS
    result = cv_fit(
        data.X,
        data.response,
        family,
        weights=data.weights,
        penalty=_penalty(args),
        options=_options(args, settings),
        nfolds=args.nfolds,
        measure_type=args.measure or "deviance",
        seed=settings.seed if args.seed is None else args.seed,
        keep=args.keep,
        relax=args.relax,
        gamma_grid=gamma_grid,
    )
    write_atomic(args.out, dump_document(cv_document(result, data.feature_names)))
    plot_out = args.plot_out or str(Path(args.out).with_suffix(".plot.csv"))
    write_csv(plot_out, result.plot_frame())
    logger.info(
        "Cross-validation written",
        extra={"path": args.out, "lambda_min": result.lambda_min, "lambda_1se": result.lambda_1se},
    )
    return 0


def cmd_predict(args: argparse.Namespace, _settings: Settings) -> int:
    model = LoadedModel(read_document(args.model))
    data = _new_data(args, model)
    pairs = model.resolve(args.s)
    gammas = model.gammas(args.gamma)
    lambdas = [lam for _, lam in pairs]
    columns: dict[str, Any] = {"row": np.arange(data.X.n_rows)}
    for gamma in gammas:
        preds = model.predict(data.X, lambdas, gamma, args.type)
        for k, (label, _) in enumerate(pairs):
            name = f"s={label}" if len(gammas) == 1 and gamma == 1.0 else f"s={label},gamma={gamma:g}"
            columns[name] = preds[:, k]
    write_csv(args.out, pd.DataFrame(columns), sys.stdout)
    return 0


def _binary_reports(args: argparse.Namespace, eta: np.ndarray, y: np.ndarray, family: Family) -> None:
    if not (args.confusion or args.roc_out):
        return
    if isinstance(family, CoxFamily) or not family.is_binomial:
        raise FamilyError("Confusion matrices and ROC curves need a binomial family")
    if args.confusion:
        pred_class = (family.linkinv(eta) >= 0.5).astype(int)
        sys.stdout.write(confusion_matrix(pred_class, (y > 0.5).astype(int)).render() + "\n")
    if args.roc_out:
        fpr, tpr = roc_curve(eta, (y > 0.5).astype(int))
        write_csv(args.roc_out, pd.DataFrame({"fpr": fpr, "tpr": tpr}))


def cmd_assess(args: argparse.Namespace, _settings: Settings) -> int:
    if args.model and args.predictions:
        raise ConfigError("Use either --model or --predictions, not both")
    response: Any
    if args.model:
        model = LoadedModel(read_document(args.model))
        data = _new_data(args, model, require_response=True)
        response = data.response
        pairs = model.resolve(args.s)
        gamma = model.gammas(args.gamma)[0]
        table = assess(model.fit, data.X, response, [lam for _, lam in pairs], gamma, data.weights)
        table.insert(0, "s", [label for label, _ in pairs])
        eta = model.predict(data.X, [pairs[0][1]], gamma)[:, 0]
        family = model.base.family
    elif args.predictions:
        family = _family(args.family or "gaussian")
        frame = pd.read_csv(args.predictions)
        pred_cols = [c for c in frame.columns if c != "row"]
        if not pred_cols:
            raise DataError("Prediction file has no prediction columns", path=args.predictions)
        preds = frame[pred_cols].to_numpy(dtype=np.float64)
        response, weights = read_response(args.data, _response_spec(args))
        n = response.n if isinstance(response, SurvivalResponse) else len(response)
        if n != preds.shape[0]:
            raise DataError("Prediction and data files differ in row count", predictions=preds.shape[0], data=n)
        rows = []
        for k, name in enumerate(pred_cols):
            row: dict[str, Any] = {"prediction": name}
            for m in valid_measures(family):
                try:
                    row[m] = measure(preds[:, k], response, family, m, weights)
                except DataError as e:
                    logger.warning("Measure skipped", extra={"measure": m, "reason": str(e)})
                    row[m] = np.nan
            rows.append(row)
        table = pd.DataFrame(rows)
        eta = preds[:, 0]
    else:
        raise ConfigError("assess needs --model or --predictions")
    if not isinstance(response, SurvivalResponse):
        _binary_reports(args, eta, np.asarray(response), family)
    write_csv(args.out, table, sys.stdout)
    return 0


def cmd_survcurve(args: argparse.Namespace, _settings: Settings) -> int:
    model = LoadedModel(read_document(args.model))
    fit = model.base
    if not fit.is_cox:
        raise FamilyError("survcurve needs a Cox model")
    if args.s is None and not isinstance(model.doc, CvDocument):
        pairs = [("last", float(fit.lambdas[-1]))]
    else:
        pairs = model.resolve(args.s)
    if len(pairs) != 1:
        raise ConfigError("survcurve takes a single --s value")
    s = pairs[0][1]
    data = ingest_csv(
        args.data,
        ResponseSpec(features=model.feature_names, strata=args.strata),
        sparse=args.sparse,
        require_response=False,
    )
    hazards = None
    if not np.any(fit.lambdas == s):
        if not args.train:
            raise ConfigError("Lambda is not on the fitted path; pass --train with --time/--status to recompute")
        train = ingest_csv(
            args.train,
            ResponseSpec(
                features=model.feature_names,
                time=args.time,
                start=args.start,
                status=args.status,
                strata=args.strata,
                weights=args.weights,
            ),
            sparse=args.sparse,
        )
        assert isinstance(train.response, SurvivalResponse)
        hazards = baseline_hazard(fit, train.X, train.response, [s], train.weights)
    curves = survival_curve(fit, data.X, s, data.strata, hazards)
    write_csv(args.out, curves_frame(curves), sys.stdout)
    return 0


# ------------------------------------------------------------------ #
# Parser
# ------------------------------------------------------------------ #


def _add_data_flags(p: argparse.ArgumentParser, response: bool = True) -> None:
    p.add_argument("--data", required=True, help="CSV file with a header row")
    p.add_argument("--sparse", action="store_true", help="Store the design matrix in compressed sparse columns")
    if response:
        p.add_argument("--response", help="Response column (GLM families)")
        p.add_argument("--time", "--stop", dest="time", help="Stop time column (Cox)")
        p.add_argument("--start", help="Start time column for (start, stop] data (Cox)")
        p.add_argument("--status", help="Event indicator column, 1 = failure (Cox)")
        p.add_argument("--weights", help="Observation weight column")
    p.add_argument("--strata", help="Stratum label column (Cox)")


def _add_fit_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--family", default="gaussian", help="Family, e.g. gaussian, binomial:probit, tweedie:q=1.5, cox")
    p.add_argument("--alpha", type=float, default=1.0, help="Elastic-net mixing parameter (default: 1, the lasso)")
    p.add_argument("--nlambda", type=int, default=100, help="Length of the lambda sequence (default: 100)")
    p.add_argument("--lambda-min-ratio", type=float, help="Smallest lambda as a fraction of lambda_max")
    p.add_argument("--lambda", dest="lambdas", help="Explicit comma-separated lambda sequence")
    p.add_argument("--penalty-factors", help="Comma-separated per-feature penalty factors")
    p.add_argument("--lower", help="Lower bound: scalar or comma-separated per feature")
    p.add_argument("--upper", help="Upper bound: scalar or comma-separated per feature")
    p.add_argument("--no-standardize", action="store_true", help="Do not standardize the columns")
    p.add_argument("--no-intercept", action="store_true", help="Fit without an intercept")
    p.add_argument("--relax", action="store_true", help="Also compute relaxed-lasso refits")
    p.add_argument("--threads", type=int, help="Worker threads (default: GLMPATH_THREADS or 1)")
    p.add_argument("--out", required=True, help="Output JSON file")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="glmpath", description="Elastic-net regularization paths")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("--log-level", choices=LOG_LEVELS, help="Logging level (default: GLMPATH_LOG_LEVEL or INFO)")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("fit", help="Fit a regularization path")
    _add_data_flags(p)
    _add_fit_flags(p)
    p.add_argument("--summary", action="store_true", help="Print Df, %%Dev and Lambda along the path")
    p.set_defaults(handler=cmd_fit)

    p = sub.add_parser("cv", help="Cross-validate the path")
    _add_data_flags(p)
    _add_fit_flags(p)
    p.add_argument("--nfolds", type=int, default=10, help="Number of folds (default: 10)")
    p.add_argument("--measure", choices=[*MEASURES, "C"], help="Loss measure (default: deviance)")
    p.add_argument("--seed", type=int, help="Fold assignment seed (default: GLMPATH_SEED or 0)")
    p.add_argument("--keep", action="store_true", help="Keep pre-validated predictions")
    p.add_argument("--gamma-grid", help="Comma-separated relaxation grid (default: 0,0.25,0.5,0.75,1)")
    p.add_argument("--plot-out", help="CV curve CSV (default: <out>.plot.csv)")
    p.set_defaults(handler=cmd_cv)

    p = sub.add_parser("predict", help="Predict from a model or CV document")
    _add_data_flags(p, response=False)
    p.add_argument("--model", required=True, help="Model or CV JSON")
    p.add_argument("--s", help="Comma-separated lambdas or lambda.min / lambda.1se / lambda.max")
    p.add_argument("--gamma", help="Comma-separated relaxation values in [0, 1]")
    p.add_argument("--type", choices=["link", "response", "class"], default="link")
    p.add_argument("--out", help="Output CSV (default: stdout)")
    p.set_defaults(handler=cmd_predict)

    p = sub.add_parser("assess", help="Compute every performance measure for the family")
    _add_data_flags(p)
    p.add_argument("--model", help="Model or CV JSON")
    p.add_argument("--predictions", help="CSV of link-scale predictions (row column optional)")
    p.add_argument("--family", help="Family of the prediction file (default: gaussian)")
    p.add_argument("--s", help="Comma-separated lambdas or aliases")
    p.add_argument("--gamma", help="Relaxation value in [0, 1]")
    p.add_argument("--confusion", action="store_true", help="Print the confusion matrix (binomial)")
    p.add_argument("--roc-out", help="Write the ROC curve CSV (binomial)")
    p.add_argument("--out", help="Output CSV (default: stdout)")
    p.set_defaults(handler=cmd_assess)

    p = sub.add_parser("survcurve", help="Survival curves from a Cox model")
    _add_data_flags(p, response=False)
    p.add_argument("--model", required=True, help="Model or CV JSON")
    p.add_argument("--s", help="Lambda or alias (default: lambda.1se for CV, else the last lambda)")
    p.add_argument("--train", help="Training CSV, needed when --s is not on the fitted path")
    p.add_argument("--time", "--stop", dest="time", help="Stop time column of --train")
    p.add_argument("--start", help="Start time column of --train")
    p.add_argument("--status", help="Event indicator column of --train")
    p.add_argument("--weights", help="Weight column of --train")
    p.add_argument("--out", help="Output CSV (default: stdout)")
    p.set_defaults(handler=cmd_survcurve)
    return parser


def _emit_error(error: Exception, details: dict[str, Any] | None = None) -> None:
    payload = {"error": type(error).__name__, "message": str(error), "details": details or {}}
    sys.stderr.write(json.dumps(payload, default=str) + "\n")


def main(argv: list[str] | None = None) -> int:
    """Main CLI entry point; returns the process exit code."""
    parser = build_parser()
    args = parser.parse_args(argv)

    try:
        settings = Settings.from_env()
    except ConfigError as e:
        _emit_error(e, e.details)
        return 1

    logging.basicConfig(
        level=getattr(logging, args.log_level or settings.log_level),
        format="%(asctime)s - %(name)s - %(levelname)s - %(message)s",
        stream=sys.stderr,
    )

    handler: Handler = args.handler
    try:
        return handler(args, settings)
    except GlmPathError as e:
        logger.debug("Command failed", exc_info=True)
        _emit_error(e, e.details)
        return 1
    except ValidationError as e:
        errors = [{"field": ".".join(str(x) for x in err["loc"]), "message": err["msg"]} for err in e.errors()]
        _emit_error(ConfigError("Invalid options"), {"errors": errors})
        return 1
    except OSError as e:
        _emit_error(e, {"path": getattr(e, "filename", None)})
        return 1


if __name__ == "__main__":
    sys.exit(main())
