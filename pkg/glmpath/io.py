"""CSV ingestion, JSON model documents and atomic file output."""

import logging
import os
import re
import tempfile
from dataclasses import dataclass
from pathlib import Path
from typing import Annotated, Any

import numpy as np
import pandas as pd
import scipy.sparse as sp
from pydantic import BaseModel, Field, TypeAdapter, ValidationError

from .cox import BaselineHazard, SurvivalResponse
from .data import FeatureMatrix, FloatArray, Standardization
from .evaluate import CvResult
from .exceptions import DataError
from .families import COX, Family, family_from_descriptor
from .models import (
    CoxBlock,
    CvDocument,
    FamilyDescriptor,
    ModelDocument,
    PenaltyDocument,
    RelaxedBlock,
    ResolvedPenalty,
    StratumHazard,
    Triplet,
)
from .path import PathFit
from .relaxed import RelaxedFit

logger = logging.getLogger(__name__)

_PARSER_LINE = re.compile(r"line (\d+)")

Document = Annotated[ModelDocument | CvDocument, Field(discriminator="document")]
_DOCUMENT = TypeAdapter(Document)


# ------------------------------------------------------------------ #
# CSV input
# ------------------------------------------------------------------ #


class ResponseSpec(BaseModel):
    """Which CSV columns hold the response, weights and strata.

    Either ``response`` (GLM) or ``time``/``status`` (Cox, with optional ``start``)
    must be given. ``features`` defaults to every remaining column.
    """

    response: str | None = None
    time: str | None = None
    start: str | None = None
    status: str | None = None
    strata: str | None = None
    weights: str | None = None
    features: list[str] | None = None

    @property
    def is_survival(self) -> bool:
        return self.time is not None

    def reserved(self) -> list[str]:
        cols = (self.response, self.time, self.start, self.status, self.strata, self.weights)
        return [c for c in cols if c is not None]


@dataclass(frozen=True)
class Dataset:
    X: FeatureMatrix
    response: FloatArray | SurvivalResponse | None
    weights: FloatArray | None
    feature_names: list[str]
    strata: np.ndarray | None = None


def _read_frame(path: str | Path) -> pd.DataFrame:
    try:
        frame = pd.read_csv(path, dtype=str, keep_default_na=False, encoding="utf-8")
    except FileNotFoundError:
        raise DataError(f"File not found: {path}", path=str(path)) from None
    except UnicodeDecodeError as e:
        raise DataError(f"CSV file is not valid UTF-8: {path}", path=str(path), byte=e.start) from None
    except pd.errors.ParserError as e:
        details: dict[str, Any] = {"path": str(path)}
        line = _PARSER_LINE.search(str(e))
        if line:
            # parser lines count from 1 and include the header
            details["row"] = int(line.group(1)) - 2
        raise DataError(f"Malformed CSV: {e}", **details) from e
    except pd.errors.EmptyDataError:
        raise DataError(f"CSV file is empty: {path}", path=str(path)) from None
    if frame.empty:
        raise DataError(f"CSV file has no data rows: {path}", path=str(path))
    return frame


def _numeric(frame: pd.DataFrame, column: str) -> FloatArray:
    if column not in frame.columns:
        raise DataError(f"Missing column '{column}'", column=column)
    raw = frame[column]
    values = pd.to_numeric(raw.str.strip(), errors="coerce")
    bad = values.isna().to_numpy()
    if bad.any():
        row = int(np.argmax(bad))
        cell = raw.iloc[row]
        if cell is None or (isinstance(cell, float) and np.isnan(cell)) or not str(cell).strip():
            raise DataError(f"Missing value in column '{column}'", row=row, column=column)
        raise DataError(f"Non-numeric value '{cell}' in column '{column}'", row=row, column=column)
    return values.to_numpy(dtype=np.float64)


def _labels(frame: pd.DataFrame, column: str) -> np.ndarray:
    if column not in frame.columns:
        raise DataError(f"Missing column '{column}'", column=column)
    labels = frame[column].fillna("").astype(str).str.strip().to_numpy()
    empty = labels == ""
    if empty.any():
        raise DataError(f"Missing value in column '{column}'", row=int(np.argmax(empty)), column=column)
    return labels


def _response(frame: pd.DataFrame, spec: ResponseSpec, strata: np.ndarray | None) -> FloatArray | SurvivalResponse:
    if spec.is_survival:
        if spec.status is None:
            raise DataError("Survival data needs a status column")
        return SurvivalResponse.build(
            stop=_numeric(frame, str(spec.time)),
            status=_numeric(frame, spec.status),
            start=_numeric(frame, spec.start) if spec.start else None,
            strata=strata,
        )
    if spec.response is None:
        raise DataError("No response column given")
    return _numeric(frame, spec.response)


def ingest_csv(
    path: str | Path, spec: ResponseSpec, sparse: bool = False, require_response: bool = True
) -> Dataset:
    """Read a design matrix (and, optionally, the response) from a CSV file with a header row.

    Row coordinates in errors are 0-based data rows.
    """
    frame = _read_frame(path)
    if spec.features is not None:
        names = list(spec.features)
    else:
        reserved = set(spec.reserved())
        names = [c for c in frame.columns if c not in reserved]
    if not names:
        raise DataError("No feature columns", path=str(path))
    X_dense = np.column_stack([_numeric(frame, c) for c in names])
    X = FeatureMatrix.sparse(sp.csc_matrix(X_dense)) if sparse else FeatureMatrix.dense(X_dense)

    weights = _numeric(frame, spec.weights) if spec.weights else None
    strata = _labels(frame, spec.strata) if spec.strata else None
    response: FloatArray | SurvivalResponse | None = None
    present = [c for c in (spec.time, spec.response) if c is not None and c in frame.columns]
    if require_response or present:
        response = _response(frame, spec, strata)
    logger.info(
        "Loaded data",
        extra={"path": str(path), "n": X.n_rows, "p": X.n_cols, "sparse": sparse, "nnz": X.nnz},
    )
    return Dataset(X=X, response=response, weights=weights, feature_names=names, strata=strata)


def read_response(path: str | Path, spec: ResponseSpec) -> tuple[FloatArray | SurvivalResponse, FloatArray | None]:
    """Only the response (and weights) of a CSV file, for scoring stored predictions."""
    frame = _read_frame(path)
    weights = _numeric(frame, spec.weights) if spec.weights else None
    strata = _labels(frame, spec.strata) if spec.strata else None
    return _response(frame, spec, strata), weights


# ------------------------------------------------------------------ #
# Documents
# ------------------------------------------------------------------ #


def _triplets(coefs: sp.csc_matrix) -> list[Triplet]:
    out: list[Triplet] = []
    for k in range(coefs.shape[1]):
        lo, hi = coefs.indptr[k], coefs.indptr[k + 1]
        out.extend((k, int(j), float(v)) for j, v in zip(coefs.indices[lo:hi], coefs.data[lo:hi], strict=True))
    return out


def _from_triplets(triplets: list[Triplet], p: int, m: int) -> sp.csc_matrix:
    if not triplets:
        return sp.csc_matrix((p, m))
    ks, js, vs = zip(*triplets, strict=True)
    coefs = sp.csc_matrix((np.asarray(vs, dtype=np.float64), (np.asarray(js), np.asarray(ks))), shape=(p, m))
    coefs.sum_duplicates()
    coefs.sort_indices()
    return coefs


def _bound_list(values: FloatArray) -> list[float | None]:
    return [None if np.isinf(v) else float(v) for v in values]


def _bound_array(values: list[float | None], default: float) -> FloatArray:
    return np.array([default if v is None else v for v in values], dtype=np.float64)


def model_document(fit: PathFit | RelaxedFit, feature_names: list[str]) -> ModelDocument:
    """Serializable form of a path (and its relaxed refits)."""
    base = fit.base if isinstance(fit, RelaxedFit) else fit
    if len(feature_names) != base.n_features:
        raise DataError(f"Expected {base.n_features} feature names, got {len(feature_names)}")
    pen = base.penalty
    relaxed = None
    if isinstance(fit, RelaxedFit):
        relaxed = RelaxedBlock(
            refit_intercepts=[float(v) for v in fit.refit_intercepts],
            refit_coefficients=_triplets(fit.refit_coefs),
            refit_failed=[bool(v) for v in fit.refit_failed],
            gamma_grid=list(fit.gamma_grid),
        )
    cox = None
    if base.is_cox and base.baseline:
        cox = CoxBlock(
            strata=[h.stratum for h in base.baseline],
            baseline=[
                StratumHazard(
                    stratum=h.stratum,
                    failure_times=[float(t) for t in h.failure_times],
                    increments=[[float(v) for v in row] for row in h.increments],
                )
                for h in base.baseline
            ],
        )
    return ModelDocument(
        family=FamilyDescriptor(**base.family.describe()),
        penalty=PenaltyDocument(
            alpha=pen.alpha,
            penalty_factor=[float(g) for g in pen.gamma],
            lower=_bound_list(pen.lower),
            upper=_bound_list(pen.upper),
            standardize=pen.standardize,
            intercept=pen.intercept,
        ),
        n_obs=base.n_obs,
        feature_names=list(feature_names),
        lambdas=[float(v) for v in base.lambdas],
        intercepts=[float(v) for v in base.intercepts],
        coefficients=_triplets(base.coefs),
        column_means=[float(v) for v in base.standardization.center],
        column_scales=[float(v) for v in base.standardization.scale],
        dev_ratio=[float(v) for v in base.dev_ratio],
        null_deviance=float(base.null_deviance),
        converged=[bool(v) for v in base.converged],
        truncated=base.truncated,
        relaxed=relaxed,
        cox=cox,
    )


def _family(descriptor: FamilyDescriptor) -> Family:
    if descriptor.name == COX.name:
        return COX
    return family_from_descriptor(descriptor.name, descriptor.link, descriptor.params)


def fit_from_document(doc: ModelDocument) -> PathFit | RelaxedFit:
    """Rebuild the fit stored in ``doc``; predictions match the original exactly."""
    p, m = len(doc.feature_names), len(doc.lambdas)
    pen = doc.penalty
    scales = np.asarray(doc.column_scales, dtype=np.float64)
    baseline: tuple[BaselineHazard, ...] = ()
    if doc.cox is not None:
        baseline = tuple(
            BaselineHazard(
                stratum=h.stratum,
                failure_times=np.asarray(h.failure_times, dtype=np.float64),
                increments=np.asarray(h.increments, dtype=np.float64).reshape(m, len(h.failure_times)),
            )
            for h in doc.cox.baseline
        )
    base = PathFit(
        family=_family(doc.family),
        lambdas=np.asarray(doc.lambdas, dtype=np.float64),
        intercepts=np.asarray(doc.intercepts, dtype=np.float64),
        coefs=_from_triplets(doc.coefficients, p, m),
        dev_ratio=np.asarray(doc.dev_ratio, dtype=np.float64),
        null_deviance=doc.null_deviance,
        penalty=ResolvedPenalty(
            alpha=pen.alpha,
            gamma=np.asarray(pen.penalty_factor, dtype=np.float64),
            lower=_bound_array(pen.lower, -np.inf),
            upper=_bound_array(pen.upper, np.inf),
            standardize=pen.standardize,
            intercept=pen.intercept,
        ),
        standardization=Standardization(
            center=np.asarray(doc.column_means, dtype=np.float64),
            scale=scales,
            excluded=np.zeros(p, dtype=bool),
        ),
        n_obs=doc.n_obs,
        converged=np.asarray(doc.converged, dtype=bool),
        truncated=doc.truncated,
        lambda_max=doc.lambdas[0],
        baseline=baseline,
    )
    if doc.relaxed is None:
        return base
    return RelaxedFit(
        base=base,
        refit_intercepts=np.asarray(doc.relaxed.refit_intercepts, dtype=np.float64),
        refit_coefs=_from_triplets(doc.relaxed.refit_coefficients, p, m),
        refit_failed=np.asarray(doc.relaxed.refit_failed, dtype=bool),
        n_refits=len({tuple(np.flatnonzero(base.coefs[:, k].toarray().ravel())) for k in range(m)}),
        gamma_grid=tuple(doc.relaxed.gamma_grid),
    )


def _rows(matrix: FloatArray) -> list[list[float]]:
    return [[float(v) for v in row] for row in np.atleast_2d(matrix)]


def cv_document(result: CvResult, feature_names: list[str]) -> CvDocument:
    preval = None
    if result.fit_preval is not None:
        preval = [[None if np.isnan(v) else float(v) for v in row] for row in result.fit_preval]
    return CvDocument(
        measure=result.measure,
        nfolds=result.nfolds,
        seed=result.seed,
        lambdas=[float(v) for v in result.lambdas],
        gamma_grid=None if result.gamma_grid is None else list(result.gamma_grid),
        cvm=_rows(result.cvm),
        cvsd=_rows(result.cvsd),
        lambda_min=result.lambda_min,
        lambda_1se=result.lambda_1se,
        gamma_min=result.gamma_min,
        gamma_1se=result.gamma_1se,
        fold_ids=[int(v) for v in result.fold_ids],
        skipped_folds=list(result.skipped_folds),
        fit_preval=preval,
        model=model_document(result.fit, feature_names),
    )


def dump_document(doc: ModelDocument | CvDocument) -> str:
    return doc.model_dump_json(indent=2)


def parse_document(text: str) -> ModelDocument | CvDocument:
    try:
        return _DOCUMENT.validate_json(text)
    except ValidationError as e:
        first = e.errors()[0]
        raise DataError(f"Invalid model document: {first['msg']}", location=[str(x) for x in first["loc"]]) from e


def read_document(path: str | Path) -> ModelDocument | CvDocument:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except FileNotFoundError:
        raise DataError(f"File not found: {path}", path=str(path)) from None
    except UnicodeDecodeError as e:
        raise DataError(f"Model file is not valid UTF-8: {path}", path=str(path), byte=e.start) from None
    return parse_document(text)


# ------------------------------------------------------------------ #
# Output
# ------------------------------------------------------------------ #


def write_atomic(path: str | Path, text: str) -> None:
    """Write ``text`` to a temporary file next to ``path`` and rename it into place."""
    target = Path(path)
    target.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=target.parent, prefix=f".{target.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.replace(tmp, target)
    except BaseException:
        Path(tmp).unlink(missing_ok=True)
        raise
    logger.debug("Wrote file", extra={"path": str(target), "bytes": len(text)})


def frame_to_csv(frame: pd.DataFrame) -> str:
    """CSV text with shortest round-trip float formatting."""
    return frame.to_csv(index=False, float_format=_format_float)


def _format_float(value: float) -> str:
    return repr(float(value))


def write_csv(path: str | Path | None, frame: pd.DataFrame, stream: Any = None) -> None:
    """Atomically write ``frame`` to ``path``; with no path, write it to ``stream``."""
    text = frame_to_csv(frame)
    if path is None:
        stream.write(text)
    else:
        write_atomic(path, text)
