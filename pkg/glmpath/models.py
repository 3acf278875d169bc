"""Pydantic models for solver options and serialized documents."""

import math
from dataclasses import dataclass
from typing import Literal

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from .data import FloatArray
from .exceptions import ConfigError

SCHEMA_VERSION = 1


# ------------------------------------------------------------------ #
# Options
# ------------------------------------------------------------------ #


@dataclass(frozen=True)
class ResolvedPenalty:
    """A penalty specification expanded to p features."""

    alpha: float
    gamma: FloatArray
    lower: FloatArray
    upper: FloatArray
    standardize: bool
    intercept: bool

    @property
    def n_features(self) -> int:
        return int(self.gamma.size)

    def subset(self, cols: np.ndarray) -> "ResolvedPenalty":
        """Restrict to ``cols`` without re-normalising the penalty factors."""
        return ResolvedPenalty(
            alpha=self.alpha,
            gamma=self.gamma[cols],
            lower=self.lower[cols],
            upper=self.upper[cols],
            standardize=self.standardize,
            intercept=self.intercept,
        )


class PenaltySpec(BaseModel):
    """Elastic-net penalty: mixing, penalty factors, box constraints and flags.

    Penalty factors are rescaled to mean 1 when resolved (disable with ``rescale=False``).
    Bounds are scalars or per-feature lists; ``None`` entries mean unbounded.
    """

    model_config = ConfigDict(frozen=True)

    alpha: float = Field(default=1.0, ge=0.0, le=1.0, description="Elastic-net mixing parameter")
    penalty_factor: list[float] | None = Field(default=None, description="Per-feature penalty factors")
    lower: float | list[float | None] | None = Field(default=None, description="Lower bounds (<= 0)")
    upper: float | list[float | None] | None = Field(default=None, description="Upper bounds (>= 0)")
    standardize: bool = True
    intercept: bool = True
    rescale: bool = Field(default=True, description="Rescale penalty factors to mean 1")

    @field_validator("penalty_factor")
    @classmethod
    def check_penalty_factor(cls, v: list[float] | None) -> list[float] | None:
        if v is None:
            return v
        if any(not math.isfinite(g) or g < 0 for g in v):
            raise ValueError("penalty factors must be finite and nonnegative")
        if not any(g > 0 for g in v):
            raise ValueError("at least one penalty factor must be positive")
        return v

    @field_validator("lower")
    @classmethod
    def check_lower(cls, v: float | list[float | None] | None) -> float | list[float | None] | None:
        values = v if isinstance(v, list) else [v]
        if any(b is not None and b > 0 for b in values):
            raise ValueError("lower bounds must be <= 0 so that zero is feasible")
        return v

    @field_validator("upper")
    @classmethod
    def check_upper(cls, v: float | list[float | None] | None) -> float | list[float | None] | None:
        values = v if isinstance(v, list) else [v]
        if any(b is not None and b < 0 for b in values):
            raise ValueError("upper bounds must be >= 0 so that zero is feasible")
        return v

    def resolve(self, p: int) -> ResolvedPenalty:
        """Expand to ``p`` features, validating list lengths."""
        if self.penalty_factor is None:
            gamma = np.ones(p)
        else:
            if len(self.penalty_factor) != p:
                raise ConfigError(f"Expected {p} penalty factors, got {len(self.penalty_factor)}")
            gamma = np.asarray(self.penalty_factor, dtype=np.float64)
        if self.rescale:
            gamma = gamma * (p / gamma.sum())
        return ResolvedPenalty(
            alpha=self.alpha,
            gamma=gamma,
            lower=_expand_bound(self.lower, p, -np.inf, "lower"),
            upper=_expand_bound(self.upper, p, np.inf, "upper"),
            standardize=self.standardize,
            intercept=self.intercept,
        )


def _expand_bound(value: float | list[float | None] | None, p: int, default: float, name: str) -> FloatArray:
    if value is None:
        return np.full(p, default)
    if not isinstance(value, list):
        return np.full(p, float(value))
    if len(value) != p:
        raise ConfigError(f"Expected {p} {name} bounds, got {len(value)}")
    return np.array([default if b is None else float(b) for b in value])


class PathOptions(BaseModel):
    """Lambda-path and solver controls."""

    model_config = ConfigDict(frozen=True)

    nlambda: int = Field(default=100, ge=1)
    lambda_min_ratio: float | None = Field(default=None, gt=0.0, lt=1.0, description="Auto: 1e-2 if p > n else 1e-4")
    lambdas: list[float] | None = Field(default=None, description="Explicit decreasing lambda sequence")
    tol: float = Field(default=1e-7, gt=0.0, description="Coordinate descent tolerance on max v_j (dbeta_j)^2")
    kkt_tol: float = Field(default=1e-7, gt=0.0, description="KKT tolerance relative to lambda_max")
    max_passes: int = Field(default=100_000, ge=1)
    max_outer: int = Field(default=25, ge=1)
    outer_tol: float = Field(default=1e-8, gt=0.0)
    max_halvings: int = Field(default=10, ge=0)
    early_stop: bool = True
    screening: bool = True
    threads: int = Field(default=1, ge=1)

    @field_validator("lambdas")
    @classmethod
    def check_lambdas(cls, v: list[float] | None) -> list[float] | None:
        if v is None:
            return v
        if not v:
            raise ValueError("lambda sequence must not be empty")
        if any(not math.isfinite(x) or x < 0 for x in v):
            raise ValueError("lambda values must be finite and nonnegative")
        ordered = sorted(v, reverse=True)
        if any(a == b for a, b in zip(ordered, ordered[1:], strict=False)):
            raise ValueError("lambda values must be distinct")
        return ordered


# ------------------------------------------------------------------ #
# Serialized documents
# ------------------------------------------------------------------ #

Triplet = tuple[int, int, float]


class FamilyDescriptor(BaseModel):
    """Family name, link and parameters; ``name == "cox"`` for Cox models."""

    name: str
    link: str | None = None
    params: dict[str, float] = Field(default_factory=dict)


class PenaltyDocument(BaseModel):
    """Resolved penalty as stored in a model file (``None`` bounds are infinite)."""

    alpha: float
    penalty_factor: list[float]
    lower: list[float | None]
    upper: list[float | None]
    standardize: bool
    intercept: bool


class RelaxedBlock(BaseModel):
    refit_intercepts: list[float]
    refit_coefficients: list[Triplet] = Field(description="(lambda_index, feature_index, value)")
    refit_failed: list[bool]
    gamma_grid: list[float]


class StratumHazard(BaseModel):
    """Breslow baseline hazard increments for one stratum, one row per lambda."""

    stratum: str
    failure_times: list[float]
    increments: list[list[float]]


class CoxBlock(BaseModel):
    strata: list[str]
    baseline: list[StratumHazard]


class ModelDocument(BaseModel):
    """A fitted path as written by ``glmpath fit``."""

    document: Literal["model"] = "model"
    schema_version: int = SCHEMA_VERSION
    family: FamilyDescriptor
    penalty: PenaltyDocument
    n_obs: int
    feature_names: list[str]
    lambdas: list[float]
    intercepts: list[float]
    coefficients: list[Triplet] = Field(description="(lambda_index, feature_index, value)")
    column_means: list[float]
    column_scales: list[float]
    dev_ratio: list[float]
    null_deviance: float
    converged: list[bool]
    truncated: bool = False
    relaxed: RelaxedBlock | None = None
    cox: CoxBlock | None = None

    @model_validator(mode="after")
    def check_consistency(self) -> "ModelDocument":
        m, p = len(self.lambdas), len(self.feature_names)
        if any(b >= a for a, b in zip(self.lambdas, self.lambdas[1:], strict=False)):
            raise ValueError("lambdas must be strictly decreasing")
        if len(self.intercepts) != m or len(self.dev_ratio) != m or len(self.converged) != m:
            raise ValueError("per-lambda arrays must match the lambda sequence length")
        triplets = self.coefficients + (self.relaxed.refit_coefficients if self.relaxed else [])
        for k, j, _ in triplets:
            if not (0 <= k < m and 0 <= j < p):
                raise ValueError(f"coefficient triplet ({k}, {j}) out of range")
        return self


class CvDocument(BaseModel):
    """Cross-validation results as written by ``glmpath cv``."""

    document: Literal["cv"] = "cv"
    schema_version: int = SCHEMA_VERSION
    measure: str
    nfolds: int
    seed: int
    lambdas: list[float]
    gamma_grid: list[float] | None = None
    cvm: list[list[float]] = Field(description="One row per gamma (a single row without relaxation)")
    cvsd: list[list[float]]
    lambda_min: float
    lambda_1se: float
    gamma_min: float | None = None
    gamma_1se: float | None = None
    fold_ids: list[int]
    skipped_folds: list[int]
    fit_preval: list[list[float | None]] | None = Field(default=None, description="Held-out link-scale predictions; null where a fold was skipped")
    model: ModelDocument
