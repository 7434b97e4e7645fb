"""Verification scoring and the condition-variance analyses.

Verification follows the standard protocol: two samples match if the
cosine similarity of their embeddings exceeds a threshold, and the
threshold is chosen automatically to maximize accuracy on the pair set.
Candidate thresholds are the sorted similarity values, the midpoints of
adjacent values, and the -1/+1 sentinels; scanning all of them makes the
search exact for the step-function accuracy.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import EmptyPairs, InvalidConfig, OneClassOnly, ZeroVector
from .geometry import NORM_FLOOR
from .synth import TEST_SET_IDS, TRAIN_SET_IDS, PairCollection, single_condition_grid


@dataclass
class VerificationReport:
    """Best-threshold verification outcome; roc is None for one-class input."""

    accuracy: float
    threshold: float
    roc: list | None
    n_pairs: int


def candidate_thresholds(sims: np.ndarray) -> np.ndarray:
    """Sorted candidates: unique values, their midpoints, and +-1 sentinels."""
    vals = np.unique(np.asarray(sims, dtype=np.float64))
    mids = 0.5 * (vals[1:] + vals[:-1])
    return np.unique(np.concatenate([vals, mids, [-1.0, 1.0]]))


def best_threshold_accuracy(sims, flags) -> tuple[float, float]:
    """Exact accuracy maximum over candidate thresholds (predict: sim > t).

    Ties are broken toward the smallest threshold.
    """
    sims = np.asarray(sims, dtype=np.float64)
    flags = np.asarray(flags, dtype=bool)
    if sims.size == 0:
        raise EmptyPairs("cannot verify an empty pair set")
    pos = np.sort(sims[flags])
    neg = np.sort(sims[~flags])
    cand = candidate_thresholds(sims)
    tp = pos.size - np.searchsorted(pos, cand, side="right")
    tn = np.searchsorted(neg, cand, side="right")
    acc = (tp + tn) / sims.size
    best = int(np.argmax(acc))  # first occurrence = smallest threshold
    return float(acc[best]), float(cand[best])


def roc_points(sims, flags) -> list:
    """ROC as (false-positive rate, true-positive rate) points.

    Runs the threshold from high to low, so the curve starts at (0, 0)
    and ends at (1, 1) and is monotone in both coordinates.
    """
    sims = np.asarray(sims, dtype=np.float64)
    flags = np.asarray(flags, dtype=bool)
    n_pos, n_neg = int(flags.sum()), int((~flags).sum())
    if n_pos == 0 or n_neg == 0:
        raise OneClassOnly("ROC needs both positive and negative pairs")
    pos = np.sort(sims[flags])
    neg = np.sort(sims[~flags])
    points = [(0.0, 0.0)]
    for t in candidate_thresholds(sims)[::-1]:
        fpr = (n_neg - np.searchsorted(neg, t, side="right")) / n_neg
        tpr = (n_pos - np.searchsorted(pos, t, side="right")) / n_pos
        if (fpr, tpr) != points[-1]:
            points.append((float(fpr), float(tpr)))
    if points[-1] != (1.0, 1.0):
        points.append((1.0, 1.0))
    return points


def roc_auc(points) -> float:
    """Trapezoidal area under an ROC point list."""
    fpr = np.array([p[0] for p in points])
    tpr = np.array([p[1] for p in points])
    return float(np.trapezoid(tpr, fpr))


def verify_similarities(sims, flags) -> VerificationReport:
    """Report for precomputed similarities (core of verify)."""
    sims = np.asarray(sims, dtype=np.float64)
    flags = np.asarray(flags, dtype=bool)
    if sims.size == 0:
        raise EmptyPairs("cannot verify an empty pair set")
    accuracy, threshold = best_threshold_accuracy(sims, flags)
    try:
        roc = roc_points(sims, flags)
    except OneClassOnly:
        roc = None
    return VerificationReport(
        accuracy=accuracy, threshold=threshold, roc=roc, n_pairs=int(sims.size)
    )


def pair_cosines(encoder, pairs: PairCollection) -> np.ndarray:
    """Cosine similarity of the embedded pair members."""
    ea = encoder.embed(pairs.features_a)
    eb = encoder.embed(pairs.features_b)
    na = np.linalg.norm(ea, axis=1)
    nb = np.linalg.norm(eb, axis=1)
    if np.any(na <= NORM_FLOOR) or np.any(nb <= NORM_FLOOR):
        raise ZeroVector("encoder produced a zero embedding")
    return np.clip(np.sum(ea * eb, axis=1) / (na * nb), -1.0, 1.0)


def verify(encoder, pairs: PairCollection) -> VerificationReport:
    """Embed both pair members and run best-threshold verification."""
    if pairs.n == 0:
        raise EmptyPairs("cannot verify an empty pair set")
    return verify_similarities(pair_cosines(encoder, pairs), pairs.same)


@dataclass
class HeatmapGrid:
    """Accuracy of models trained on T_i (rows) tested on Q_j (columns)."""

    loss_kind: str
    cells: np.ndarray
    train_ids: tuple = TRAIN_SET_IDS
    test_ids: tuple = TEST_SET_IDS

    @property
    def mean_under(self) -> float:
        return partition_means(self.cells)[0]

    @property
    def mean_balanced(self) -> float:
        return partition_means(self.cells)[1]

    @property
    def mean_over(self) -> float:
        return partition_means(self.cells)[2]


def partition_means(grid) -> tuple[float, float, float]:
    """Means over the under-training (train variance < test variance),
    balanced (equal) and over-training (train > test) cells."""
    cells = grid.cells if isinstance(grid, HeatmapGrid) else np.asarray(grid, dtype=np.float64)
    if cells.ndim != 2 or cells.shape[0] != cells.shape[1]:
        raise InvalidConfig(f"grid must be square, got {cells.shape}")
    i, j = np.indices(cells.shape)
    return (
        float(cells[i < j].mean()),
        float(cells[i == j].mean()),
        float(cells[i > j].mean()),
    )


def heatmap(split, loss_kind: str, cfg) -> HeatmapGrid:
    """Train one model per T row (same seed everywhere) and score all Q sets."""
    from dataclasses import replace as _replace

    from . import trainer as _trainer

    cfg = _replace(cfg, loss_kind=loss_kind)
    cells = np.zeros((len(TRAIN_SET_IDS), len(TEST_SET_IDS)))
    for i, tid in enumerate(TRAIN_SET_IDS):
        result = _trainer.train(split, tid, cfg)
        for j, qid in enumerate(TEST_SET_IDS):
            cells[i, j] = verify(result.encoder, split.pair_collection(qid)).accuracy
    return HeatmapGrid(loss_kind=cfg.loss_kind, cells=cells)


@dataclass
class SingleConditionReport:
    """V x V accuracy grid for one varied attribute plus the unseen-condition gap."""

    attribute: str
    values: list
    cells: np.ndarray

    @property
    def gap(self) -> float:
        """mean(diagonal) - mean(off-diagonal): cost of unseen conditions."""
        i, j = np.indices(self.cells.shape)
        return float(self.cells[i == j].mean() - self.cells[i != j].mean())


def single_condition_report(
    universe,
    attribute: str,
    cfg,
    *,
    values=None,
    pair_budget: int = 500,
    train_budget: int = 1500,
) -> SingleConditionReport:
    """Train per attribute value, test on every converted pair set."""
    from . import trainer as _trainer

    grid = single_condition_grid(
        universe, attribute, values=values, pair_budget=pair_budget, train_budget=train_budget
    )
    n = len(grid.values)
    cells = np.zeros((n, n))
    for i, train_set in enumerate(grid.train_sets):
        result = _trainer.train_on_samples(
            train_set, cfg, n_classes=universe.n_train_ids, train_id=f"{attribute}={grid.values[i]}"
        )
        for j, pairs in enumerate(grid.test_pairs):
            cells[i, j] = verify(result.encoder, pairs).accuracy
    return SingleConditionReport(attribute=attribute, values=grid.values, cells=cells)
