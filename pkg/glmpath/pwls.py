"""Penalized weighted least squares by cyclic coordinate descent.

Solves

    minimize  (1/2n) sum_i w_i (z_i - b0 - x~_i' b)^2
              + lambda sum_j gamma_j ((1 - alpha)/2 b_j^2 + alpha |b_j|)
    subject to L_j <= b_j <= U_j

on the standardized columns x~, screening features with the sequential strong rule
and certifying the result with the KKT conditions. Residuals are maintained
incrementally; for sparse columns centering is folded into a scalar shift so an
update touches only the stored nonzeros of the column.
"""

import logging
from dataclasses import dataclass

import numpy as np
import numpy.typing as npt

from .data import FeatureMatrix, FloatArray, IntArray, Standardization, standardization
from .exceptions import DataError
from .models import ResolvedPenalty

logger = logging.getLogger(__name__)

BoolArray = npt.NDArray[np.bool_]


def soft_threshold(x: float, t: float) -> float:
    """sign(x) * max(|x| - t, 0)."""
    if x > t:
        return x - t
    if x < -t:
        return x + t
    return 0.0


# ------------------------------------------------------------------ #
# Residual kernels
# ------------------------------------------------------------------ #


class _DenseKernel:
    def __init__(self, xs: FloatArray, w: FloatArray, r: FloatArray) -> None:
        self.n = xs.shape[0]
        self.xs = xs
        self.w = w
        self.xw = np.asfortranarray(xs * w[:, None])
        self.r = r.copy()

    def curvature(self) -> FloatArray:
        return np.einsum("ij,ij->j", self.xw, self.xs) / self.n

    def grad(self, j: int) -> float:
        return float(self.xw[:, j] @ self.r) / self.n

    def update(self, j: int, delta: float) -> None:
        self.r -= delta * self.xs[:, j]

    def shift_intercept(self, delta: float) -> None:
        self.r -= delta

    def weighted_sum(self) -> float:
        return float(self.w @ self.r)

    def full_gradient(self) -> FloatArray:
        return (self.xw.T @ self.r) / self.n

    def residual(self) -> FloatArray:
        return self.r.copy()


class _SparseKernel:
    """Residual r_true = r + shift with r touched only at stored nonzeros."""

    def __init__(self, X: FeatureMatrix, std: Standardization, w: FloatArray, r: FloatArray) -> None:
        assert X.csc is not None
        self.n, p = X.n_rows, X.n_cols
        self.csc = X.csc
        self.indptr = X.csc.indptr
        self.indices = X.csc.indices
        self.scale = std.scale
        counts = np.diff(self.indptr)
        col_of_nz = np.repeat(np.arange(p), counts)
        self.xs = X.csc.data / std.scale[col_of_nz]
        self.cs = std.center / std.scale
        self.w = w
        wxs = w[self.indices] * self.xs
        self.wxs = wxs
        self.sum_wx = np.bincount(col_of_nz, weights=wxs, minlength=p)
        self.sum_wx2 = np.bincount(col_of_nz, weights=wxs * self.xs, minlength=p)
        self.total_w = float(w.sum())
        self.r = r.copy()
        self.shift = 0.0
        self.wr = float(w @ r)

    def curvature(self) -> FloatArray:
        cs = self.cs
        return (self.sum_wx2 - 2.0 * cs * self.sum_wx + cs**2 * self.total_w) / self.n

    def grad(self, j: int) -> float:
        lo, hi = self.indptr[j], self.indptr[j + 1]
        s = float(self.wxs[lo:hi] @ self.r[self.indices[lo:hi]])
        s += self.shift * self.sum_wx[j] - self.cs[j] * (self.wr + self.shift * self.total_w)
        return s / self.n

    def update(self, j: int, delta: float) -> None:
        lo, hi = self.indptr[j], self.indptr[j + 1]
        self.r[self.indices[lo:hi]] -= delta * self.xs[lo:hi]
        self.wr -= delta * self.sum_wx[j]
        self.shift += delta * self.cs[j]

    def shift_intercept(self, delta: float) -> None:
        self.shift -= delta

    def weighted_sum(self) -> float:
        return self.wr + self.shift * self.total_w

    def full_gradient(self) -> FloatArray:
        wr = self.w * self.residual()
        g = np.asarray(self.csc.T @ wr, dtype=np.float64) / self.scale - self.cs * wr.sum()
        return g / self.n

    def residual(self) -> FloatArray:
        return self.r + self.shift


_Kernel = _DenseKernel | _SparseKernel


# ------------------------------------------------------------------ #
# Standardized design
# ------------------------------------------------------------------ #


@dataclass(frozen=True)
class StandardizedDesign:
    """A design matrix with its standardization, prepared once per fit."""

    X: FeatureMatrix
    std: Standardization
    xs: FloatArray | None

    @classmethod
    def build(cls, X: FeatureMatrix, w: FloatArray, standardize: bool, center: bool) -> "StandardizedDesign":
        std = standardization(X, w, standardize, center)
        xs = None
        if not X.is_sparse:
            xs = np.asfortranarray((X.to_dense() - std.center) / std.scale)
            xs[:, std.excluded] = 0.0
        return cls(X=X, std=std, xs=xs)

    @property
    def n(self) -> int:
        return self.X.n_rows

    @property
    def p(self) -> int:
        return self.X.n_cols

    def kernel(self, w: FloatArray, r: FloatArray) -> _Kernel:
        if self.xs is not None:
            return _DenseKernel(self.xs, w, r)
        return _SparseKernel(self.X, self.std, w, r)

    def linear_predictor(self, intercept: float, beta: FloatArray) -> FloatArray:
        """b0 + x~' b for standardized coefficients."""
        if self.xs is not None:
            return intercept + self.xs @ beta
        b = np.where(self.std.excluded, 0.0, beta) / self.std.scale
        return intercept + self.X.matvec(b) - float(self.std.center @ b)

    def to_original(self, intercept: float, beta: FloatArray) -> tuple[float, FloatArray]:
        """Map standardized (b0, b) to the original column scale."""
        b = np.where(self.std.excluded, 0.0, beta) / self.std.scale
        return intercept - float(self.std.center @ b), b

    def bounds(self, penalty: ResolvedPenalty) -> tuple[FloatArray, FloatArray]:
        """Box constraints on the standardized scale."""
        return penalty.lower * self.std.scale, penalty.upper * self.std.scale


# ------------------------------------------------------------------ #
# Problem / result
# ------------------------------------------------------------------ #


@dataclass(frozen=True)
class WlsProblem:
    """One penalized WLS subproblem at ``lam`` with warm start (intercept, beta).

    ``beta`` is on the standardized scale. ``allowed`` restricts which features may
    become nonzero (null fits, refits); ``use_intercept`` overrides the penalty's flag.
    """

    design: StandardizedDesign
    z: FloatArray
    w: FloatArray
    penalty: ResolvedPenalty
    lam: float
    lam_prev: float | None = None
    beta: FloatArray | None = None
    intercept: float = 0.0
    active_hint: IntArray | None = None
    allowed: BoolArray | None = None
    use_intercept: bool | None = None

    def __post_init__(self) -> None:
        n = self.design.n
        if self.z.shape != (n,) or self.w.shape != (n,):
            raise DataError(f"Working response and weights must have length {n}")
        if self.penalty.n_features != self.design.p:
            raise DataError("Penalty does not match the number of features")

    @property
    def fits_intercept(self) -> bool:
        return self.penalty.intercept if self.use_intercept is None else self.use_intercept

    def warm_beta(self) -> FloatArray:
        if self.beta is None:
            return np.zeros(self.design.p)
        return np.asarray(self.beta, dtype=np.float64).copy()

    def eligible(self) -> BoolArray:
        mask = ~self.design.std.excluded
        if self.allowed is not None:
            mask &= self.allowed
        return mask

    def l1(self) -> FloatArray:
        return self.lam * self.penalty.alpha * self.penalty.gamma

    def l2(self) -> FloatArray:
        return self.lam * (1.0 - self.penalty.alpha) * self.penalty.gamma


@dataclass(frozen=True)
class PwlsResult:
    intercept: float
    beta: FloatArray
    gradient: FloatArray
    converged: bool
    n_passes: int
    strong_size: int


def wls_objective(problem: WlsProblem, intercept: float, beta: FloatArray) -> float:
    """Value of the penalized WLS objective at (intercept, beta)."""
    r = problem.z - problem.design.linear_predictor(intercept, beta)
    loss = float(problem.w @ r**2) / (2.0 * problem.design.n)
    pen = problem.lam * float(
        problem.penalty.gamma
        @ ((1.0 - problem.penalty.alpha) / 2.0 * beta**2 + problem.penalty.alpha * np.abs(beta))
    )
    return loss + pen


# ------------------------------------------------------------------ #
# Screening and KKT
# ------------------------------------------------------------------ #


def strong_set(
    grad_prev: FloatArray,
    lam: float,
    lam_prev: float,
    penalty: ResolvedPenalty,
    beta_prev: FloatArray | None = None,
) -> IntArray:
    """Sequential strong rule: features that may be active at ``lam``."""
    if lam > lam_prev:
        raise DataError("Strong rule requires lambda_k <= lambda_(k-1)")
    keep = np.abs(grad_prev) > penalty.alpha * (2.0 * lam - lam_prev) * penalty.gamma
    keep |= penalty.gamma == 0
    if beta_prev is not None:
        keep |= beta_prev != 0
    return np.flatnonzero(keep)


def _kkt_violations(
    beta: FloatArray,
    grad: FloatArray,
    l1: FloatArray,
    l2: FloatArray,
    lower: FloatArray,
    upper: FloatArray,
    eligible: BoolArray,
    tol: float,
) -> BoolArray:
    d = grad - l2 * beta
    zero = beta == 0
    at_upper = ~zero & (beta >= upper)
    at_lower = ~zero & (beta <= lower)
    interior_pos = (beta > 0) & ~at_upper
    interior_neg = (beta < 0) & ~at_lower

    viol = zero & (((d > l1 + tol) & (upper > 0)) | ((d < -l1 - tol) & (lower < 0)))
    viol |= interior_pos & (np.abs(d - l1) > tol)
    viol |= interior_neg & (np.abs(d + l1) > tol)
    viol |= at_upper & (d - l1 < -tol)
    viol |= at_lower & (d + l1 > tol)
    return viol & eligible


def kkt_check(beta: FloatArray, intercept: float, problem: WlsProblem, tol: float) -> IntArray:
    """Indices of features violating the KKT conditions at (intercept, beta)."""
    design = problem.design
    r = problem.z - design.linear_predictor(intercept, beta)
    grad = design.kernel(problem.w, r).full_gradient()
    lower, upper = design.bounds(problem.penalty)
    viol = _kkt_violations(beta, grad, problem.l1(), problem.l2(), lower, upper, problem.eligible(), tol)
    return np.flatnonzero(viol)


# ------------------------------------------------------------------ #
# Solver
# ------------------------------------------------------------------ #


def coordinate_update(
    beta_j: float,
    grad_j: float,
    v_j: float,
    l1_j: float,
    l2_j: float,
    lower_j: float,
    upper_j: float,
) -> float:
    """New value of one coefficient.

    ``grad_j`` is (1/n) sum_i w_i x~_ij r_i at the current residual, ``v_j`` the weighted
    column curvature; the soft-thresholded, ridge-shrunk value is clipped to the box.
    """
    denom = v_j + l2_j
    if denom <= 0.0:
        return 0.0
    new = soft_threshold(grad_j + v_j * beta_j, l1_j) / denom
    return min(max(new, lower_j), upper_j)


def solve_pwls(
    problem: WlsProblem,
    tol: float = 1e-7,
    max_passes: int = 100_000,
    kkt_tol: float = 1e-7,
    screening: bool = True,
) -> PwlsResult:
    """KKT-certified coordinate descent solution of one penalized WLS problem."""
    design = problem.design
    n = design.n
    w = problem.w
    beta = problem.warm_beta()
    b0 = float(problem.intercept) if problem.fits_intercept else 0.0
    eligible = problem.eligible()
    beta[~eligible] = 0.0
    lower, upper = design.bounds(problem.penalty)
    beta = np.clip(beta, lower, upper)
    l1, l2 = problem.l1(), problem.l2()

    kernel = design.kernel(w, problem.z - design.linear_predictor(b0, beta))
    v = kernel.curvature()
    total_w = float(w.sum())
    fit_intercept = problem.fits_intercept and total_w > 0

    if screening:
        lam_prev = problem.lam if problem.lam_prev is None else max(problem.lam_prev, problem.lam)
        strong = np.zeros(design.p, dtype=bool)
        strong[strong_set(kernel.full_gradient(), problem.lam, lam_prev, problem.penalty, beta)] = True
        if problem.active_hint is not None:
            strong[problem.active_hint] = True
        strong &= eligible
    else:
        strong = eligible.copy()

    def sweep(idx: IntArray) -> float:
        nonlocal b0
        dlx = 0.0
        for j in idx:
            bj = beta[j]
            new = coordinate_update(bj, kernel.grad(j), v[j], l1[j], l2[j], lower[j], upper[j])
            if new != bj:
                delta = new - bj
                kernel.update(j, delta)
                beta[j] = new
                dlx = max(dlx, v[j] * delta * delta)
        if fit_intercept:
            d0 = kernel.weighted_sum() / total_w
            if d0 != 0.0:
                b0 += d0
                kernel.shift_intercept(d0)
                dlx = max(dlx, total_w / n * d0 * d0)
        return dlx

    passes = 0
    inner_tol = tol
    converged = False
    while True:
        # full sweeps over the strong set, with active-set sweeps in between
        while passes < max_passes:
            dlx = sweep(np.flatnonzero(strong))
            passes += 1
            if dlx < inner_tol:
                break
            while passes < max_passes:
                dlx = sweep(np.flatnonzero(strong & (beta != 0)))
                passes += 1
                if dlx < inner_tol:
                    break
        grad = kernel.full_gradient()
        viol = _kkt_violations(beta, grad, l1, l2, lower, upper, eligible, kkt_tol)
        if not viol.any():
            converged = True
            break
        if passes >= max_passes:
            break
        outside = viol & ~strong
        if outside.any():
            strong |= outside
            logger.debug("KKT violations outside strong set", extra={"n_added": int(outside.sum())})
        else:
            inner_tol /= 100.0

    if not converged:
        logger.warning(
            "Coordinate descent reached max_passes without certification",
            extra={"max_passes": max_passes, "lambda": problem.lam},
        )
    return PwlsResult(
        intercept=b0,
        beta=beta,
        gradient=grad,
        converged=converged,
        n_passes=passes,
        strong_size=int(strong.sum()),
    )
