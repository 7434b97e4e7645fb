"""Forward evaluation of the full loss family.

Classification losses (softmax, fixed-scale cosine softmax, CosFace,
ArcFace) compare embeddings against per-class weight rows; metric losses
(N-pair, SN-pair) compare embeddings pairwise.  The combined loss is the
plain sum of the ArcFace and SN-pair terms, and both scale factors can be
derived from a single epsilon instead of being tuned by hand.

Embeddings and class weights enter these functions raw; normalization
happens inside (except for the deliberately unnormalized softmax and
N-pair baselines).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import (
    DimensionMismatch,
    InvalidConfig,
    InvalidEpsilon,
    InvalidMargin,
    NoNegatives,
    NoPositives,
)
from .geometry import (
    ClassWeightMatrix,
    EmbeddingBatch,
    SimilarityMatrix,
    cosine_matrix,
    log_sum_exp,
    log_sum_exp_rows,
    safe_arccos,
    similarity_matrix,
)

MARGIN_KINDS = ("none", "additive_cosine", "additive_angle")

LOSS_KINDS = (
    "softmax",
    "norm_softmax",
    "cosface",
    "arcface",
    "npair",
    "snpair",
    "mixface",
)

# Kinds that require a ClassWeightMatrix.
CLASSIFICATION_KINDS = frozenset(
    {"softmax", "norm_softmax", "cosface", "arcface", "mixface"}
)
METRIC_KINDS = frozenset({"npair", "snpair"})


def canonical_loss_kind(name: str) -> str:
    """Map spelling variants (n-pair, SN-Pair, ...) onto LOSS_KINDS."""
    key = name.strip().lower().replace("-", "_")
    aliases = {"n_pair": "npair", "sn_pair": "snpair", "normsoftmax": "norm_softmax"}
    key = aliases.get(key, key)
    if key not in LOSS_KINDS:
        raise InvalidConfig(f"unknown loss kind {name!r}; expected one of {LOSS_KINDS}")
    return key


@dataclass(frozen=True)
class MarginConfig:
    """Scale factors and angular margin shared by the loss family."""

    s1: float = 16.0
    s2: float = 16.0
    m: float = 0.25

    def __post_init__(self):
        if not (self.s1 > 0 and self.s2 > 0):
            raise InvalidConfig(f"scales must be positive, got s1={self.s1}, s2={self.s2}")
        if not (0.0 <= self.m < math.pi / 2):
            raise InvalidMargin(f"margin must lie in [0, pi/2), got {self.m}")


@dataclass(frozen=True)
class PairSet:
    """Cosine similarities of the positive and negative pairs of a batch."""

    positives: np.ndarray
    negatives: np.ndarray

    def __post_init__(self):
        pos = np.asarray(self.positives, dtype=np.float64).ravel()
        neg = np.asarray(self.negatives, dtype=np.float64).ravel()
        object.__setattr__(self, "positives", pos)
        object.__setattr__(self, "negatives", neg)
        for name, vals in (("positives", pos), ("negatives", neg)):
            if vals.size and (vals.min() < -1.0 or vals.max() > 1.0):
                raise InvalidConfig(f"{name} contain values outside [-1, 1]")

    @property
    def k(self) -> int:
        return self.positives.size

    @property
    def l(self) -> int:
        return self.negatives.size


@dataclass(frozen=True)
class UnifiedScale:
    """Scale factors derived from a single epsilon.

    Construction verifies the defining round trip: plugging (derived_s1,
    derived_s2) back into the ideal-similarity probabilities must return
    1 - epsilon to within 1e-9.
    """

    epsilon: float
    derived_s1: float
    derived_s2: float
    n_classes: int
    n_negatives: float
    margin: float

    def round_trip_errors(self) -> tuple[float, float]:
        p1 = 1.0 / (1.0 + (self.n_classes - 1) * math.exp(-self.derived_s1 * math.cos(self.margin)))
        p2 = 1.0 / (1.0 + self.n_negatives * math.exp(-self.derived_s2))
        target = 1.0 - self.epsilon
        return abs(p1 - target), abs(p2 - target)

    def __post_init__(self):
        e1, e2 = self.round_trip_errors()
        if max(e1, e2) > 1e-9:
            raise InvalidConfig(
                f"unified scale round trip violated: errors ({e1:g}, {e2:g})"
            )


def _check_batch_weights(batch: EmbeddingBatch, weights: ClassWeightMatrix):
    if batch.dim != weights.dim:
        raise DimensionMismatch(
            f"embedding dim {batch.dim} != class weight dim {weights.dim}"
        )
    if batch.labels.max() >= weights.n_classes:
        raise DimensionMismatch(
            f"label {batch.labels.max()} out of range for C={weights.n_classes}"
        )


def softmax_loss(batch: EmbeddingBatch, weights: ClassWeightMatrix) -> float:
    """Mean cross-entropy over raw inner-product logits w_j . x_i."""
    _check_batch_weights(batch, weights)
    logits = batch.vectors @ weights.weights.T
    target = logits[np.arange(batch.n), batch.labels]
    return float(np.mean(log_sum_exp_rows(logits) - target))


def _margin_logit(target_cos: np.ndarray, m: float, margin_kind: str) -> np.ndarray:
    """Apply the margin to the target-class cosine."""
    if margin_kind == "none":
        return target_cos
    if margin_kind == "additive_cosine":
        return target_cos - m
    # additive_angle: theta -> theta + m through the clamped arccos
    return np.cos(safe_arccos(target_cos) + m)


def cosine_softmax_loss(
    batch: EmbeddingBatch,
    weights: ClassWeightMatrix,
    s: float,
    m: float = 0.0,
    margin_kind: str = "none",
) -> float:
    """Mean cross-entropy over scaled cosine logits with an optional margin.

    The margin hits only the target-class logit: s*(cos theta - m) for
    additive_cosine, s*cos(theta + m) for additive_angle, s*cos theta
    with no margin.
    """
    if margin_kind not in MARGIN_KINDS:
        raise InvalidConfig(f"margin_kind must be one of {MARGIN_KINDS}, got {margin_kind!r}")
    if s <= 0:
        raise InvalidConfig(f"scale must be positive, got {s}")
    if m < 0:
        raise InvalidMargin(f"margin must be >= 0, got {m}")
    if margin_kind == "additive_angle" and m >= math.pi / 2:
        raise InvalidMargin(f"additive_angle margin must be < pi/2, got {m}")
    _check_batch_weights(batch, weights)

    cos = cosine_matrix(batch, weights)
    rows = np.arange(batch.n)
    target = _margin_logit(cos[rows, batch.labels], m, margin_kind)
    logits = s * cos
    logits[rows, batch.labels] = s * target
    return float(np.mean(log_sum_exp_rows(logits) - s * target))


def extract_pairs(sim: SimilarityMatrix, labels) -> PairSet:
    """Split the upper triangle of a similarity matrix by label equality."""
    labels = np.asarray(labels, dtype=np.int64)
    if labels.shape != (sim.n,):
        raise DimensionMismatch(
            f"labels shape {labels.shape} does not match similarity size {sim.n}"
        )
    iu, ju = np.triu_indices(sim.n, k=1)
    vals = sim.values[iu, ju]
    same = labels[iu] == labels[ju]
    return PairSet(positives=vals[same], negatives=vals[~same])


def _pair_softmax_terms(pos: np.ndarray, neg: np.ndarray) -> np.ndarray:
    """Per-positive terms log(1 + sum_l exp(neg_l - pos_k)) of the pair loss.

    Factoring the inner sum through a single log-sum-exp over the negatives
    keeps the evaluation O(K + L) and overflow-free.
    """
    lse_neg = log_sum_exp(neg)
    return np.log1p(np.exp(lse_neg - pos))


def sn_pair_loss(pairs: PairSet, s2: float) -> float:
    """Similarity-based N-pair loss over cosine pairs with scale s2."""
    if s2 <= 0:
        raise InvalidConfig(f"s2 must be positive, got {s2}")
    if pairs.k == 0:
        raise NoPositives("SN-pair loss needs at least one positive pair")
    if pairs.l == 0:
        raise NoNegatives("SN-pair loss needs at least one negative pair")
    terms = _pair_softmax_terms(s2 * pairs.positives, s2 * pairs.negatives)
    return float(np.mean(terms))


def sn_pair_loss_softmax_form(pairs: PairSet, s2: float) -> float:
    """Algebraically equivalent softmax form of the SN-pair loss.

    Kept as a separate evaluation path (per-positive log-sum-exp over the
    combined logit vector) so the two forms can be checked against each
    other.
    """
    if s2 <= 0:
        raise InvalidConfig(f"s2 must be positive, got {s2}")
    if pairs.k == 0:
        raise NoPositives("SN-pair loss needs at least one positive pair")
    if pairs.l == 0:
        raise NoNegatives("SN-pair loss needs at least one negative pair")
    neg_logits = s2 * pairs.negatives
    total = 0.0
    for pos_logit in s2 * pairs.positives:
        total += log_sum_exp(np.concatenate(([pos_logit], neg_logits))) - pos_logit
    return total / pairs.k


def _raw_product_pairs(batch: EmbeddingBatch) -> tuple[np.ndarray, np.ndarray]:
    """Upper-triangle raw inner products split into positives/negatives."""
    products = batch.vectors @ batch.vectors.T
    iu, ju = np.triu_indices(batch.n, k=1)
    vals = products[iu, ju]
    same = batch.labels[iu] == batch.labels[ju]
    return vals[same], vals[~same]


def n_pair_loss(batch: EmbeddingBatch) -> float:
    """N-pair loss over unnormalized inner products (no scale factor).

    Same functional form as the SN-pair loss but on raw products, so it is
    sensitive to embedding magnitudes.
    """
    pos, neg = _raw_product_pairs(batch)
    if pos.size == 0:
        raise NoPositives("N-pair loss needs at least one positive pair")
    if neg.size == 0:
        raise NoNegatives("N-pair loss needs at least one negative pair")
    return float(np.mean(_pair_softmax_terms(pos, neg)))


def mixface_loss(
    batch: EmbeddingBatch, weights: ClassWeightMatrix, cfg: MarginConfig
) -> float:
    """Sum of the angular-margin classification term and the SN-pair term."""
    arc = cosine_softmax_loss(batch, weights, cfg.s1, cfg.m, "additive_angle")
    pairs = extract_pairs(similarity_matrix(batch), batch.labels)
    return arc + sn_pair_loss(pairs, cfg.s2)


def derive_unified_scale(epsilon: float, n_classes: int, n_negatives: float, m: float) -> UnifiedScale:
    """Derive (s1, s2) from epsilon, the class count and the negative-pair count.

    Solves the ideal-similarity equations
        exp(s1 cos m) / (exp(s1 cos m) + C - 1) = 1 - epsilon
        exp(s2) / (exp(s2) + L) = 1 - epsilon
    in natural logs.
    """
    # 0.5 itself is allowed: it is the degenerate point where both scales are 0.
    if not (0.0 < epsilon <= 0.5):
        raise InvalidEpsilon(f"epsilon must lie in (0, 0.5], got {epsilon}")
    if not (0.0 <= m < math.pi / 2):
        raise InvalidMargin(f"margin must lie in [0, pi/2), got {m}")
    if n_classes < 2:
        raise InvalidConfig(f"need at least 2 classes, got {n_classes}")
    if n_negatives < 1:
        raise InvalidConfig(f"need at least 1 negative pair, got {n_negatives}")
    log_odds = math.log1p(-epsilon) - math.log(epsilon)
    s1 = (log_odds + math.log(n_classes - 1)) / math.cos(m)
    s2 = log_odds + math.log(n_negatives)
    return UnifiedScale(
        epsilon=epsilon,
        derived_s1=s1,
        derived_s2=s2,
        n_classes=n_classes,
        n_negatives=float(n_negatives),
        margin=m,
    )


def evaluate_loss(
    kind: str,
    batch: EmbeddingBatch,
    weights: ClassWeightMatrix | None = None,
    cfg: MarginConfig | None = None,
) -> float:
    """Dispatch a loss kind to its forward evaluation."""
    kind = canonical_loss_kind(kind)
    cfg = cfg if cfg is not None else MarginConfig()
    if kind in CLASSIFICATION_KINDS:
        if weights is None:
            raise InvalidConfig(f"loss {kind!r} requires class weights")
        if kind == "softmax":
            return softmax_loss(batch, weights)
        if kind == "norm_softmax":
            return cosine_softmax_loss(batch, weights, cfg.s1, 0.0, "none")
        if kind == "cosface":
            return cosine_softmax_loss(batch, weights, cfg.s1, cfg.m, "additive_cosine")
        if kind == "arcface":
            return cosine_softmax_loss(batch, weights, cfg.s1, cfg.m, "additive_angle")
        return mixface_loss(batch, weights, cfg)
    if kind == "npair":
        return n_pair_loss(batch)
    return sn_pair_loss(extract_pairs(similarity_matrix(batch), batch.labels), cfg.s2)
