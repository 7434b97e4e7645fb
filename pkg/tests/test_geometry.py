import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from losslab.errors import DimensionMismatch, EmptyInput, ZeroVector
from losslab.geometry import (
    EmbeddingBatch,
    SimilarityMatrix,
    cosine_matrix,
    log_sum_exp,
    normalize_rows,
    safe_arccos,
    similarity_matrix,
)


class TestNormalizeRows:
    def test_3_4_5_triangle(self):
        np.testing.assert_allclose(normalize_rows([[3.0, 4.0]]), [[0.6, 0.8]], atol=1e-15)

    def test_axis_vectors(self):
        out = normalize_rows([[1.0, 0.0], [0.0, 2.0]])
        np.testing.assert_allclose(out, [[1.0, 0.0], [0.0, 1.0]], atol=1e-15)

    def test_random_rows_have_unit_norm(self):
        rng = np.random.default_rng(7)
        out = normalize_rows(rng.standard_normal((5, 8)))
        np.testing.assert_allclose(np.linalg.norm(out, axis=1), 1.0, atol=1e-12)

    def test_zero_row_rejected(self):
        with pytest.raises(ZeroVector):
            normalize_rows([[0.0, 0.0], [1.0, 2.0]])


class TestCosineMatrix:
    def test_orthogonal(self):
        np.testing.assert_allclose(cosine_matrix([[1.0, 0.0]], [[0.0, 1.0]]), [[0.0]], atol=1e-15)

    def test_identical_direction(self):
        np.testing.assert_allclose(cosine_matrix([[1.0, 1.0]], [[1.0, 1.0]]), [[1.0]], atol=1e-12)

    def test_45_degrees(self):
        # oracle: 1/sqrt(2)
        np.testing.assert_allclose(
            cosine_matrix([[1.0, 0.0]], [[1.0, 1.0]]), [[0.7071067811865476]], atol=1e-12
        )

    def test_dimension_mismatch(self):
        with pytest.raises(DimensionMismatch):
            cosine_matrix([[1.0, 0.0]], [[1.0, 0.0, 0.0]])

    def test_entries_clamped(self):
        rng = np.random.default_rng(3)
        sims = cosine_matrix(rng.standard_normal((6, 3)), rng.standard_normal((4, 3)))
        assert sims.min() >= -1.0 and sims.max() <= 1.0

    def test_self_similarity_is_valid_similarity_matrix(self):
        rng = np.random.default_rng(11)
        for _ in range(20):
            m = rng.standard_normal((rng.integers(2, 12), rng.integers(2, 9)))
            values = cosine_matrix(m, m)
            SimilarityMatrix(values)  # validates symmetry/diagonal/range

    def test_invariant_to_positive_row_scaling(self):
        rng = np.random.default_rng(5)
        a = rng.standard_normal((6, 4))
        b = rng.standard_normal((5, 4))
        scaled_a = a * rng.uniform(0.1, 50.0, 6)[:, None]
        scaled_b = b * rng.uniform(0.1, 50.0, 5)[:, None]
        base = cosine_matrix(a, b)
        np.testing.assert_allclose(cosine_matrix(scaled_a, scaled_b), base, rtol=1e-9, atol=1e-9)


class TestSafeArccos:
    def test_zero(self):
        assert safe_arccos(0.0) == pytest.approx(math.pi / 2, abs=1e-15)

    def test_one_is_clamped(self):
        # oracle: acos(1 - 1e-7)
        assert safe_arccos(1.0) == pytest.approx(4.4721359910904126e-4, rel=1e-9)

    def test_minus_one_by_symmetry(self):
        assert safe_arccos(-1.0) == pytest.approx(math.pi - 4.4721359910904126e-4, rel=1e-12)

    def test_array_input(self):
        out = safe_arccos(np.array([0.0, 1.0, -1.0]))
        assert out.shape == (3,)
        assert out[1] == pytest.approx(safe_arccos(1.0))


class TestLogSumExp:
    def test_two_zeros(self):
        assert log_sum_exp([0.0, 0.0]) == pytest.approx(math.log(2.0), abs=1e-12)

    def test_max_shift_survives_large_entries(self):
        assert log_sum_exp([1000.0, 1000.0]) == pytest.approx(1000.0 + math.log(2.0), abs=1e-9)

    def test_singleton_identity(self):
        for x in (-3.5, 0.0, 123.456):
            assert log_sum_exp([x]) == pytest.approx(x, abs=1e-12)

    def test_empty_rejected(self):
        with pytest.raises(EmptyInput):
            log_sum_exp([])

    @settings(max_examples=60, deadline=None)
    @given(st.lists(st.floats(-700, 700), min_size=1, max_size=40))
    def test_bounds(self, values):
        lse = log_sum_exp(values)
        assert lse >= max(values) - 1e-12
        assert lse <= max(values) + math.log(len(values)) + 1e-12


class TestBatchTypes:
    def test_embedding_batch_validation(self):
        with pytest.raises(DimensionMismatch):
            EmbeddingBatch(np.ones((2, 1)), np.array([0, 0]))  # d < 2
        with pytest.raises(DimensionMismatch):
            EmbeddingBatch(np.ones((2, 3)), np.array([0]))  # label length
        with pytest.raises(ZeroVector):
            EmbeddingBatch(np.array([[1.0, np.nan]]), np.array([0]))

    def test_similarity_matrix_helper(self):
        rng = np.random.default_rng(0)
        batch = EmbeddingBatch(rng.standard_normal((7, 5)), rng.integers(0, 3, 7))
        sim = similarity_matrix(batch)
        assert sim.n == 7
        np.testing.assert_array_equal(np.diag(sim.values), np.ones(7))
