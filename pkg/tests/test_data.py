"""Tests for design-matrix storage and column statistics."""

import numpy as np
import pytest
import scipy.sparse as sp

from glmpath.data import (
    FeatureMatrix,
    check_weights,
    column_stats,
    normalize_weights,
    predict_linear,
    standardization,
    weighted_dot,
)
from glmpath.exceptions import DataError


@pytest.fixture
def random_pair() -> tuple[FeatureMatrix, FeatureMatrix]:
    rng = np.random.default_rng(7)
    dense = rng.normal(size=(12, 5))
    dense[rng.random(dense.shape) < 0.6] = 0.0
    return FeatureMatrix.dense(dense), FeatureMatrix.sparse(sp.csc_matrix(dense))


class TestFeatureMatrix:
    """Construction and invariants."""

    def test_dense_is_read_only(self):
        """Test that dense storage cannot be mutated after construction."""
        X = FeatureMatrix.dense([[1.0, 2.0], [3.0, 4.0]])
        assert X.values is not None
        with pytest.raises(ValueError):
            X.values[0, 0] = 5.0

    def test_rejects_non_finite(self):
        """Test that NaN cells are reported with coordinates."""
        with pytest.raises(DataError) as exc_info:
            FeatureMatrix.dense([[1.0, 2.0], [np.nan, 4.0]])
        assert exc_info.value.details == {"row": 1, "column": 0}

    def test_rejects_one_dimensional(self):
        """Test that a vector is not a design matrix."""
        with pytest.raises(DataError, match="2-dimensional"):
            FeatureMatrix.dense([1.0, 2.0])

    def test_from_csc_checks_pointers(self):
        """Test that a bad final column pointer is rejected."""
        with pytest.raises(DataError, match="Final column pointer"):
            FeatureMatrix.from_csc([0, 1, 3], [0, 1], [1.0, 2.0], (2, 2))

    def test_from_csc_checks_row_order(self):
        """Test that row indices must increase within a column."""
        with pytest.raises(DataError) as exc_info:
            FeatureMatrix.from_csc([0, 2], [1, 0], [1.0, 2.0], (2, 1))
        assert exc_info.value.details["column"] == 0

    def test_from_csc_checks_row_range(self):
        """Test that out-of-range row indices are rejected."""
        with pytest.raises(DataError, match="out of range"):
            FeatureMatrix.from_csc([0, 1], [5], [1.0], (2, 1))

    def test_sparse_to_dense(self, random_pair):
        """Test that sparse storage densifies to the same values."""
        dense, sparse = random_pair
        np.testing.assert_array_equal(sparse.to_dense(), dense.to_dense())
        assert sparse.nnz == dense.nnz

    def test_take_rows_and_columns(self, random_pair):
        """Test that row and column subsets agree across storage kinds."""
        dense, sparse = random_pair
        rows = np.array([0, 3, 4, 9])
        np.testing.assert_array_equal(dense.take_rows(rows).to_dense(), sparse.take_rows(rows).to_dense())
        cols = np.array([1, 4])
        np.testing.assert_array_equal(dense.take_columns(cols).to_dense(), sparse.take_columns(cols).to_dense())
        assert dense.take_columns([]).n_cols == 0


class TestColumnStats:
    """Weighted means and population standard deviations."""

    def test_constant_column(self):
        """Test that a constant column has scale 0."""
        stats = column_stats(FeatureMatrix.dense([[1.0], [1.0], [1.0]]))
        assert stats.means[0] == pytest.approx(1.0)
        assert stats.scales[0] == 0.0
        assert stats.constant[0]

    def test_symmetric_column(self):
        """Test mean 0 and scale 1 for (-1, 1)."""
        stats = column_stats(FeatureMatrix.dense([[-1.0], [1.0]]))
        assert stats.means[0] == pytest.approx(0.0)
        assert stats.scales[0] == pytest.approx(1.0)

    def test_sparse_column(self):
        """Test that the sparse column (0, 0, 3) has mean 1 and scale sqrt(2)."""
        X = FeatureMatrix.sparse(sp.csc_matrix(np.array([[0.0], [0.0], [3.0]])))
        stats = column_stats(X)
        assert stats.means[0] == pytest.approx(1.0)
        assert stats.scales[0] == pytest.approx(np.sqrt(2.0))

    def test_sparse_matches_dense(self, random_pair):
        """Test sparse statistics against the densified copy."""
        dense, sparse = random_pair
        w = np.linspace(0.5, 2.0, dense.n_rows)
        a, b = column_stats(dense, w), column_stats(sparse, w)
        np.testing.assert_allclose(b.means, a.means, rtol=1e-12, atol=1e-14)
        np.testing.assert_allclose(b.scales, a.scales, rtol=1e-10, atol=1e-12)

    def test_uniform_weights_match_numpy(self, random_pair):
        """Test that uniform weights reproduce the unweighted mean and population SD."""
        dense, _ = random_pair
        stats = column_stats(dense)
        np.testing.assert_allclose(stats.means, dense.to_dense().mean(axis=0))
        np.testing.assert_allclose(stats.scales, dense.to_dense().std(axis=0))

    def test_zero_weight_rows_ignored_for_constancy(self):
        """Test that a column constant on the weighted rows counts as constant."""
        X = FeatureMatrix.dense([[1.0], [1.0], [5.0]])
        stats = column_stats(X, [1.0, 1.0, 0.0])
        assert stats.constant[0]


class TestWeights:
    def test_default_is_uniform(self):
        np.testing.assert_array_equal(check_weights(None, 3), np.ones(3))

    @pytest.mark.parametrize(
        "weights, message",
        [
            ([1.0, -1.0], "nonnegative"),
            ([0.0, 0.0], "positive"),
            ([1.0, np.inf], "finite"),
            ([1.0], "Expected 2"),
        ],
    )
    def test_invalid(self, weights, message):
        """Test the weight validation messages."""
        with pytest.raises(DataError, match=message):
            check_weights(weights, 2)

    def test_normalize_sums_to_n(self):
        w = normalize_weights(np.array([1.0, 2.0, 5.0]))
        assert w.sum() == pytest.approx(3.0)


class TestStandardization:
    def test_excluded_columns_get_unit_scale(self):
        """Test that zero-variance columns are flagged and left unscaled."""
        X = FeatureMatrix.dense([[1.0, 0.0], [1.0, 2.0], [1.0, 4.0]])
        std = standardization(X, np.ones(3), standardize=True, center_columns=True)
        assert std.excluded.tolist() == [True, False]
        assert std.scale[0] == 1.0
        assert std.center[1] == pytest.approx(2.0)

    def test_uncentered_uses_root_mean_square(self):
        """Test that without centering columns are scaled by their RMS."""
        X = FeatureMatrix.dense([[3.0], [4.0]])
        std = standardization(X, np.ones(2), standardize=True, center_columns=False)
        assert std.center[0] == 0.0
        assert std.scale[0] == pytest.approx(np.sqrt(12.5))


class TestWeightedDot:
    """Inner-loop kernel."""

    def test_uncentered(self):
        X = FeatureMatrix.dense([[1.0], [2.0]])
        assert weighted_dot(X, 0, [1.0, 1.0], [1.0, 1.0]) == pytest.approx(3.0)

    def test_centered(self):
        """Test centering at the weighted mean 1.5."""
        X = FeatureMatrix.dense([[1.0], [2.0]])
        assert weighted_dot(X, 0, [1.0, -1.0], [1.0, 1.0], centered=True) == pytest.approx(-1.0)

    def test_sparse_matches_dense(self, random_pair):
        """Test the centered sparse form against the dense column."""
        dense, sparse = random_pair
        rng = np.random.default_rng(3)
        v = rng.normal(size=dense.n_rows)
        w = rng.uniform(0.5, 1.5, size=dense.n_rows)
        for j in range(dense.n_cols):
            for centered in (False, True):
                a = weighted_dot(dense, j, v, w, centered=centered)
                b = weighted_dot(sparse, j, v, w, centered=centered)
                assert b == pytest.approx(a, rel=1e-12, abs=1e-12)

    def test_bilinear_in_v(self, random_pair):
        dense, _ = random_pair
        rng = np.random.default_rng(4)
        v1, v2 = rng.normal(size=(2, dense.n_rows))
        w = np.ones(dense.n_rows)
        total = weighted_dot(dense, 2, 2.0 * v1 + v2, w)
        assert total == pytest.approx(2.0 * weighted_dot(dense, 2, v1, w) + weighted_dot(dense, 2, v2, w))

    def test_index_out_of_range(self, random_pair):
        dense, _ = random_pair
        with pytest.raises(DataError, match="out of range"):
            weighted_dot(dense, 99, np.ones(dense.n_rows), np.ones(dense.n_rows))


class TestPredictLinear:
    def test_zero_beta_gives_intercept(self, random_pair):
        dense, _ = random_pair
        np.testing.assert_array_equal(predict_linear(dense, np.zeros(dense.n_cols), 2.5), np.full(dense.n_rows, 2.5))

    def test_identity_design(self):
        X = FeatureMatrix.dense(np.eye(2))
        np.testing.assert_allclose(predict_linear(X, [3.0, -1.0]), [3.0, -1.0])

    def test_sparse_matches_dense(self, random_pair):
        dense, sparse = random_pair
        beta = np.arange(dense.n_cols, dtype=float)
        np.testing.assert_allclose(predict_linear(sparse, beta, 1.0), predict_linear(dense, beta, 1.0), atol=1e-12)

    def test_dimension_mismatch(self, random_pair):
        dense, _ = random_pair
        with pytest.raises(DataError, match="Coefficient vector"):
            predict_linear(dense, [1.0])
