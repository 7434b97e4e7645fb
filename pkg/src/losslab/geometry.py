"""Normalization, cosine kernels, safe angular ops and log-sum-exp.

All losses in this package are built on the primitives below.  Everything
is float64: the hand-written gradients are verified against central
finite differences, which needs the full double-precision budget.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionMismatch, EmptyInput, ZeroVector

# Norms at or below this are treated as zero vectors.
NORM_FLOOR = 1e-12

# Clamp distance from +-1 before arccos; keeps the derivative finite.
ARCCOS_DELTA = 1e-7


def _as_rows(x) -> np.ndarray:
    """Accept an EmbeddingBatch, ClassWeightMatrix or plain 2-D array."""
    if isinstance(x, EmbeddingBatch):
        return x.vectors
    if isinstance(x, ClassWeightMatrix):
        return x.weights
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim != 2:
        raise DimensionMismatch(f"expected a 2-D row matrix, got shape {arr.shape}")
    return arr


@dataclass(frozen=True)
class EmbeddingBatch:
    """N feature vectors with integer class labels in [0, C)."""

    vectors: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        vectors = np.ascontiguousarray(np.asarray(self.vectors, dtype=np.float64))
        labels = np.ascontiguousarray(np.asarray(self.labels, dtype=np.int64))
        object.__setattr__(self, "vectors", vectors)
        object.__setattr__(self, "labels", labels)
        if vectors.ndim != 2 or vectors.shape[0] < 1 or vectors.shape[1] < 2:
            raise DimensionMismatch(
                f"need an N x d matrix with N >= 1, d >= 2, got {vectors.shape}"
            )
        if not np.all(np.isfinite(vectors)):
            raise ZeroVector("embedding batch contains non-finite entries")
        if labels.shape != (vectors.shape[0],):
            raise DimensionMismatch(
                f"labels shape {labels.shape} does not match N={vectors.shape[0]}"
            )
        if labels.size and labels.min() < 0:
            raise DimensionMismatch("labels must be non-negative class IDs")

    @property
    def n(self) -> int:
        return self.vectors.shape[0]

    @property
    def dim(self) -> int:
        return self.vectors.shape[1]


@dataclass(frozen=True)
class ClassWeightMatrix:
    """C learnable class weight rows; no row may be the zero vector."""

    weights: np.ndarray

    def __post_init__(self):
        weights = np.ascontiguousarray(np.asarray(self.weights, dtype=np.float64))
        object.__setattr__(self, "weights", weights)
        if weights.ndim != 2 or weights.shape[0] < 2:
            raise DimensionMismatch(
                f"need a C x d matrix with C >= 2, got {weights.shape}"
            )
        norms = np.linalg.norm(weights, axis=1)
        if np.any(norms <= NORM_FLOOR):
            raise ZeroVector("class weight matrix has a zero row")

    @property
    def n_classes(self) -> int:
        return self.weights.shape[0]

    @property
    def dim(self) -> int:
        return self.weights.shape[1]


@dataclass(frozen=True)
class SimilarityMatrix:
    """N x N cosine similarities; validated symmetric with unit diagonal."""

    values: np.ndarray

    def __post_init__(self):
        values = np.ascontiguousarray(np.asarray(self.values, dtype=np.float64))
        object.__setattr__(self, "values", values)
        n = values.shape[0]
        if values.ndim != 2 or values.shape != (n, n):
            raise DimensionMismatch(f"similarity matrix must be square, got {values.shape}")
        if np.max(np.abs(values - values.T)) > 1e-12:
            raise DimensionMismatch("similarity matrix is not symmetric within 1e-12")
        if np.max(np.abs(np.diag(values) - 1.0)) > 1e-9:
            raise DimensionMismatch("similarity matrix diagonal is not 1 within 1e-9")
        if values.min() < -1.0 or values.max() > 1.0:
            raise DimensionMismatch("similarity values outside [-1, 1]")

    @property
    def n(self) -> int:
        return self.values.shape[0]


def normalize_rows(m) -> np.ndarray:
    """Scale every row of `m` to unit L2 norm.

    Raises ZeroVector if any row norm is <= 1e-12.
    """
    rows = _as_rows(m)
    norms = np.linalg.norm(rows, axis=1)
    if np.any(norms <= NORM_FLOOR):
        raise ZeroVector(f"row norm <= {NORM_FLOOR:g} cannot be normalized")
    return rows / norms[:, None]


def cosine_matrix(a, b) -> np.ndarray:
    """Pairwise cosine similarities between rows of `a` and rows of `b`.

    Entry (i, j) is the cosine of the angle between row i of `a` and
    row j of `b`, clamped to [-1, 1] to absorb rounding.
    """
    ra, rb = _as_rows(a), _as_rows(b)
    if ra.shape[1] != rb.shape[1]:
        raise DimensionMismatch(
            f"dimension mismatch: {ra.shape[1]} vs {rb.shape[1]}"
        )
    sims = normalize_rows(ra) @ normalize_rows(rb).T
    return np.clip(sims, -1.0, 1.0)


def similarity_matrix(batch: EmbeddingBatch) -> SimilarityMatrix:
    """Validated self-similarity matrix of a batch."""
    values = cosine_matrix(batch, batch)
    # A @ A.T is symmetric up to rounding and the diagonal is ||x_hat||^2;
    # enforce both exactly so the SimilarityMatrix invariants are strict.
    values = 0.5 * (values + values.T)
    np.fill_diagonal(values, 1.0)
    return SimilarityMatrix(values)


def safe_arccos(c):
    """arccos of `c` clamped into [-1 + 1e-7, 1 - 1e-7].

    The clamp keeps the arccos derivative finite at the poles; the cost is
    a similarity bias of at most 1e-7.  Accepts scalars or arrays.
    """
    clamped = np.clip(c, -1.0 + ARCCOS_DELTA, 1.0 - ARCCOS_DELTA)
    out = np.arccos(clamped)
    if np.isscalar(c) or np.ndim(c) == 0:
        return float(out)
    return out


def log_sum_exp(v) -> float:
    """log(sum(exp(v))) via max-shift; safe for entries up to ~700."""
    arr = np.asarray(v, dtype=np.float64).ravel()
    if arr.size == 0:
        raise EmptyInput("log_sum_exp of an empty vector")
    m = arr.max()
    return float(m + np.log(np.sum(np.exp(arr - m))))


def log_sum_exp_rows(m: np.ndarray) -> np.ndarray:
    """Row-wise log-sum-exp of a 2-D array (same max-shift scheme)."""
    arr = np.asarray(m, dtype=np.float64)
    if arr.ndim != 2 or arr.shape[1] == 0:
        raise EmptyInput("log_sum_exp_rows needs a non-empty 2-D array")
    mx = arr.max(axis=1, keepdims=True)
    return (mx + np.log(np.sum(np.exp(arr - mx), axis=1, keepdims=True))).ravel()
