"""Design-matrix storage, weighted column statistics and implicit standardization."""

import logging
from dataclasses import dataclass
from typing import Any

import numpy as np
import numpy.typing as npt
import scipy.sparse as sp

from .exceptions import DataError

logger = logging.getLogger(__name__)

FloatArray = npt.NDArray[np.float64]
IntArray = npt.NDArray[np.intp]


@dataclass(frozen=True)
class FeatureMatrix:
    """An n x p design matrix held either dense (column-major) or as CSC.

    Build instances with :meth:`dense`, :meth:`sparse` or :meth:`from_csc`;
    the constructors validate and the object is never mutated afterwards.
    """

    n_rows: int
    n_cols: int
    values: FloatArray | None = None
    csc: sp.csc_matrix | None = None

    @classmethod
    def dense(cls, values: Any) -> "FeatureMatrix":
        """Wrap a 2-d array, copying it into Fortran order."""
        arr = np.asfortranarray(np.asarray(values, dtype=np.float64))
        if arr.ndim != 2:
            raise DataError(f"Design matrix must be 2-dimensional, got {arr.ndim} dimensions")
        if arr.size == 0:
            raise DataError("Design matrix is empty")
        if not np.all(np.isfinite(arr)):
            row, col = np.argwhere(~np.isfinite(arr))[0]
            raise DataError("Design matrix contains a non-finite value", row=int(row), column=int(col))
        arr.setflags(write=False)
        return cls(n_rows=arr.shape[0], n_cols=arr.shape[1], values=arr)

    @classmethod
    def sparse(cls, matrix: Any) -> "FeatureMatrix":
        """Convert any scipy sparse matrix (or dense array) to canonical CSC storage."""
        csc = sp.csc_matrix(matrix, dtype=np.float64, copy=True)
        csc.sum_duplicates()
        csc.sort_indices()
        return cls.from_csc(csc.indptr, csc.indices, csc.data, csc.shape)

    @classmethod
    def from_csc(cls, indptr: Any, indices: Any, data: Any, shape: tuple[int, int]) -> "FeatureMatrix":
        """Build from raw CSC arrays, checking the storage invariants."""
        n, p = int(shape[0]), int(shape[1])
        if n == 0 or p == 0:
            raise DataError("Design matrix is empty")
        indptr = np.asarray(indptr, dtype=np.int64)
        indices = np.asarray(indices, dtype=np.int64)
        data = np.asarray(data, dtype=np.float64)
        if indptr.shape != (p + 1,) or indptr[0] != 0:
            raise DataError("Column pointer array must have p + 1 entries starting at 0")
        if np.any(np.diff(indptr) < 0):
            raise DataError("Column pointers must be nondecreasing")
        if indptr[-1] != data.size or indices.size != data.size:
            raise DataError("Final column pointer must equal the number of stored values")
        if indices.size and (indices.min() < 0 or indices.max() >= n):
            raise DataError("Row index out of range")
        for j in range(p):
            rows = indices[indptr[j] : indptr[j + 1]]
            if rows.size > 1 and np.any(np.diff(rows) <= 0):
                raise DataError("Row indices must be strictly increasing within a column", column=j)
        if not np.all(np.isfinite(data)):
            raise DataError("Design matrix contains a non-finite value")
        csc = sp.csc_matrix((data, indices, indptr), shape=(n, p))
        return cls(n_rows=n, n_cols=p, csc=csc)

    @property
    def is_sparse(self) -> bool:
        return self.csc is not None

    @property
    def nnz(self) -> int:
        if self.csc is not None:
            return int(self.csc.nnz)
        return int(np.count_nonzero(self.values))

    def column(self, j: int) -> tuple[IntArray | None, FloatArray]:
        """Return ``(rows, values)`` for sparse storage or ``(None, column)`` for dense."""
        if not 0 <= j < self.n_cols:
            raise DataError(f"Column index {j} out of range for {self.n_cols} columns")
        if self.csc is not None:
            lo, hi = self.csc.indptr[j], self.csc.indptr[j + 1]
            return self.csc.indices[lo:hi], self.csc.data[lo:hi]
        assert self.values is not None
        return None, self.values[:, j]

    def to_dense(self) -> FloatArray:
        if self.csc is not None:
            return np.asfortranarray(self.csc.toarray())
        assert self.values is not None
        return self.values

    def take_rows(self, rows: Any) -> "FeatureMatrix":
        rows = np.asarray(rows)
        if self.csc is not None:
            return FeatureMatrix.sparse(self.csc[rows, :])
        assert self.values is not None
        return FeatureMatrix.dense(self.values[rows, :])

    def take_columns(self, cols: Any) -> "FeatureMatrix":
        """Column subset; an empty selection yields an n x 0 dense placeholder."""
        cols = np.asarray(cols, dtype=np.intp)
        if cols.size == 0:
            return FeatureMatrix(n_rows=self.n_rows, n_cols=0, values=np.zeros((self.n_rows, 0), order="F"))
        if self.csc is not None:
            return FeatureMatrix.sparse(self.csc[:, cols])
        assert self.values is not None
        return FeatureMatrix.dense(self.values[:, cols])

    def matvec(self, beta: FloatArray) -> FloatArray:
        if self.csc is not None:
            return np.asarray(self.csc @ beta, dtype=np.float64)
        assert self.values is not None
        return self.values @ beta

    def rmatvec(self, u: FloatArray) -> FloatArray:
        """X^T u."""
        if self.csc is not None:
            return np.asarray(self.csc.T @ u, dtype=np.float64)
        assert self.values is not None
        return self.values.T @ u


@dataclass(frozen=True)
class ColumnStats:
    """Weighted per-column means and population standard deviations."""

    means: FloatArray
    scales: FloatArray

    @property
    def constant(self) -> npt.NDArray[np.bool_]:
        return self.scales == 0.0


@dataclass(frozen=True)
class Standardization:
    """Centers and scales defining the standardized columns x~_j = (x_j - center_j) / scale_j.

    ``excluded`` marks zero-variance columns; solvers keep their coefficients at 0.
    """

    center: FloatArray
    scale: FloatArray
    excluded: npt.NDArray[np.bool_]


def check_weights(w: Any, n: int) -> FloatArray:
    """Validate observation weights; ``None`` means uniform weights."""
    if w is None:
        return np.ones(n)
    arr = np.asarray(w, dtype=np.float64).ravel()
    if arr.shape != (n,):
        raise DataError(f"Expected {n} observation weights, got {arr.size}")
    if not np.all(np.isfinite(arr)):
        raise DataError("Observation weights must be finite")
    if np.any(arr < 0):
        raise DataError("Observation weights must be nonnegative", row=int(np.argmax(arr < 0)))
    if not np.any(arr > 0):
        raise DataError("At least one observation weight must be positive")
    return arr


def normalize_weights(w: FloatArray) -> FloatArray:
    """Rescale weights to sum to n."""
    return w * (w.size / w.sum())


def _constant_columns(X: FeatureMatrix, w: FloatArray) -> npt.NDArray[np.bool_]:
    """Columns whose values are identical over the rows with positive weight."""
    live = w > 0
    n_live = int(live.sum())
    out = np.zeros(X.n_cols, dtype=bool)
    if X.csc is None:
        assert X.values is not None
        sub = X.values[live, :]
        return np.all(sub == sub[:1, :], axis=0)
    for j in range(X.n_cols):
        rows, vals = X.column(j)
        assert rows is not None
        vals = vals[live[rows]]
        if vals.size == 0:
            out[j] = True
        elif vals.size < n_live:
            out[j] = bool(np.all(vals == 0.0))
        else:
            out[j] = bool(np.all(vals == vals[0]))
    return out


def column_stats(X: FeatureMatrix, w: Any = None) -> ColumnStats:
    """Weighted column means and 1/n-convention standard deviations.

    Weights are normalized to sum 1. Sparse columns are centered analytically:
    the variance is E[x^2] - mean^2, never formed on a densified copy.
    """
    if X.n_rows == 0 or X.n_cols == 0:
        raise DataError("Cannot compute column statistics of an empty matrix")
    wbar = check_weights(w, X.n_rows)
    wbar = wbar / wbar.sum()
    constant = _constant_columns(X, wbar)

    if X.csc is None:
        assert X.values is not None
        means = wbar @ X.values
        var = wbar @ (X.values - means) ** 2
    else:
        means = X.rmatvec(wbar)
        second = np.asarray(X.csc.multiply(X.csc).T @ wbar, dtype=np.float64)
        var = np.maximum(second - means**2, 0.0)

    scales = np.sqrt(var)
    scales[constant] = 0.0
    return ColumnStats(means=means, scales=scales)


def standardization(X: FeatureMatrix, w: FloatArray, standardize: bool, center_columns: bool) -> Standardization:
    """Centers/scales used by the solvers.

    With ``center_columns`` the columns are centered at their weighted means (GLMs with
    an intercept, and Cox models, whose partial likelihood ignores shifts of eta).
    Otherwise they are left uncentered and, when standardizing, scaled by their
    weighted root mean square.
    """
    stats = column_stats(X, w)
    excluded = stats.constant.copy()
    if center_columns:
        center = stats.means.copy()
        spread = stats.scales.copy()
    else:
        center = np.zeros(X.n_cols)
        wbar = w / w.sum()
        if X.csc is None:
            assert X.values is not None
            spread = np.sqrt(wbar @ X.values**2)
        else:
            spread = np.sqrt(np.asarray(X.csc.multiply(X.csc).T @ wbar, dtype=np.float64))
    scale = spread if standardize else np.ones(X.n_cols)
    scale = np.where(excluded | (scale == 0.0), 1.0, scale)
    return Standardization(center=center, scale=scale, excluded=excluded)


def weighted_dot(
    X: FeatureMatrix,
    j: int,
    v: Any,
    w: Any,
    centered: bool = False,
    means: FloatArray | None = None,
) -> float:
    """Return sum_i w_i (x_ij - c_j) v_i with c_j the column mean when ``centered``.

    ``means`` defaults to the ``w``-weighted column means.
    """
    v = np.asarray(v, dtype=np.float64)
    w = np.asarray(w, dtype=np.float64)
    if v.shape != (X.n_rows,) or w.shape != (X.n_rows,):
        raise DataError(f"Vectors must have length {X.n_rows}")
    rows, vals = X.column(j)
    c = 0.0
    if centered:
        c = float(means[j]) if means is not None else float(column_stats(X, w).means[j])
    if rows is None:
        return float(np.dot(w * (vals - c), v))
    wv = w * v
    total = float(np.dot(vals, wv[rows]))
    if c != 0.0:
        total -= c * float(wv.sum())
    return total


def predict_linear(X: FeatureMatrix, beta: Any, intercept: float = 0.0) -> FloatArray:
    """Linear predictor eta = intercept + X beta."""
    beta = np.asarray(beta, dtype=np.float64).ravel()
    if beta.shape != (X.n_cols,):
        raise DataError(f"Coefficient vector has length {beta.size}, expected {X.n_cols}")
    if X.n_cols == 0:
        return np.full(X.n_rows, float(intercept))
    return X.matvec(beta) + intercept
