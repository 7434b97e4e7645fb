"""Analytic backward passes for every loss, plus a finite-difference oracle.

Each backward computes gradients w.r.t. the raw (pre-normalization)
embeddings and, for classification losses, the raw class weight rows.
The loss value reported alongside is obtained by calling the forward
function itself, so it is bit-identical to the forward path by
construction.

The finite-difference checker below is written against the forward
functions only and shares no derivative code with the backward passes.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import losses
from .errors import InvalidConfig, LossLabError, PerturbationOutOfDomain
from .geometry import (
    ARCCOS_DELTA,
    ClassWeightMatrix,
    EmbeddingBatch,
    normalize_rows,
    similarity_matrix,
)
from .losses import CLASSIFICATION_KINDS, MarginConfig, canonical_loss_kind


@dataclass(frozen=True)
class LossResult:
    """Loss value with gradients; grad_weights is None for metric losses."""

    value: float
    grad_embeddings: np.ndarray
    grad_weights: np.ndarray | None


def _softmax_rows(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def _cosine_backward_embeddings(
    coeff: np.ndarray, x_hat: np.ndarray, other_hat: np.ndarray,
    cos: np.ndarray, norms: np.ndarray,
) -> np.ndarray:
    """Chain dL/d(cos) back to raw rows of the first argument.

    d cos_ij / d x_i = (o_hat_j - cos_ij * x_hat_i) / ||x_i||, so the row
    gradient is (coeff @ o_hat - rowsum(coeff*cos) * x_hat) / ||x||.
    """
    radial = np.sum(coeff * cos, axis=1, keepdims=True)
    return (coeff @ other_hat - radial * x_hat) / norms[:, None]


def _softmax_loss_backward(batch: EmbeddingBatch, weights: ClassWeightMatrix):
    logits = batch.vectors @ weights.weights.T
    probs = _softmax_rows(logits)
    probs[np.arange(batch.n), batch.labels] -= 1.0
    g = probs / batch.n
    return g @ weights.weights, g.T @ batch.vectors


def _cosine_softmax_backward(
    batch: EmbeddingBatch,
    weights: ClassWeightMatrix,
    s: float,
    m: float,
    margin_kind: str,
):
    x_norms = np.linalg.norm(batch.vectors, axis=1)
    w_norms = np.linalg.norm(weights.weights, axis=1)
    x_hat = batch.vectors / x_norms[:, None]
    w_hat = weights.weights / w_norms[:, None]
    cos = np.clip(x_hat @ w_hat.T, -1.0, 1.0)
    rows = np.arange(batch.n)
    t = cos[rows, batch.labels]

    if margin_kind == "additive_angle":
        # Inside the clamp: d cos(theta+m)/d t = sin(theta+m)/sin(theta).
        # Beyond it the clamped arccos is constant, so the derivative is 0.
        clamped = np.abs(t) > 1.0 - ARCCOS_DELTA
        tc = np.clip(t, -1.0 + ARCCOS_DELTA, 1.0 - ARCCOS_DELTA)
        theta = np.arccos(tc)
        phi = np.cos(theta + m)
        dphi = np.where(clamped, 0.0, np.sin(theta + m) / np.sqrt(1.0 - tc * tc))
    elif margin_kind == "additive_cosine":
        phi, dphi = t - m, np.ones_like(t)
    else:
        phi, dphi = t, np.ones_like(t)

    logits = s * cos
    logits[rows, batch.labels] = s * phi
    probs = _softmax_rows(logits)
    probs[rows, batch.labels] -= 1.0
    coeff = (s / batch.n) * probs        # dL/d(cos), target column still raw
    coeff[rows, batch.labels] *= dphi    # chain through the margin map

    grad_x = _cosine_backward_embeddings(coeff, x_hat, w_hat, cos, x_norms)
    radial_w = np.sum(coeff * cos, axis=0)
    grad_w = (coeff.T @ x_hat - radial_w[:, None] * w_hat) / w_norms[:, None]
    return grad_x, grad_w


def _pair_coefficients(pos: np.ndarray, neg: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """dL/d(pos_k), dL/d(neg_l) of mean_k log(1 + sum_l exp(neg_l - pos_k)).

    With D_k = exp(pos_k) + sum_l exp(neg_l):
      dL/dpos_k = -(1/K) (1 - exp(pos_k)/D_k)
      dL/dneg_l =  (1/K) exp(neg_l) sum_k 1/D_k
    computed in log space to stay overflow-free.
    """
    k = pos.size
    lse_neg = losses.log_sum_exp(neg)
    log_d = np.logaddexp(pos, lse_neg)
    grad_pos = -np.exp(lse_neg - log_d) / k
    log_s = losses.log_sum_exp(-log_d)
    grad_neg = np.exp(neg + log_s) / k
    return grad_pos, grad_neg


def _pair_coeff_matrix(
    n: int, iu: np.ndarray, ju: np.ndarray, same: np.ndarray,
    grad_pos: np.ndarray, grad_neg: np.ndarray,
) -> np.ndarray:
    """Scatter per-pair coefficients into a symmetric N x N matrix."""
    coeff = np.zeros((n, n))
    pair_grad = np.empty(iu.size)
    pair_grad[same] = grad_pos
    pair_grad[~same] = grad_neg
    coeff[iu, ju] = pair_grad
    coeff[ju, iu] = pair_grad
    return coeff


def _sn_pair_backward(batch: EmbeddingBatch, s2: float):
    sim = similarity_matrix(batch).values
    iu, ju = np.triu_indices(batch.n, k=1)
    same = batch.labels[iu] == batch.labels[ju]
    vals = sim[iu, ju]
    grad_pos, grad_neg = _pair_coefficients(s2 * vals[same], s2 * vals[~same])
    coeff = _pair_coeff_matrix(batch.n, iu, ju, same, s2 * grad_pos, s2 * grad_neg)

    norms = np.linalg.norm(batch.vectors, axis=1)
    x_hat = batch.vectors / norms[:, None]
    radial = np.sum(coeff * sim, axis=1, keepdims=True)
    return (coeff @ x_hat - radial * x_hat) / norms[:, None]


def _n_pair_backward(batch: EmbeddingBatch):
    products = batch.vectors @ batch.vectors.T
    iu, ju = np.triu_indices(batch.n, k=1)
    same = batch.labels[iu] == batch.labels[ju]
    vals = products[iu, ju]
    grad_pos, grad_neg = _pair_coefficients(vals[same], vals[~same])
    coeff = _pair_coeff_matrix(batch.n, iu, ju, same, grad_pos, grad_neg)
    return coeff @ batch.vectors


def backward(
    kind: str,
    batch: EmbeddingBatch,
    weights: ClassWeightMatrix | None = None,
    cfg: MarginConfig | None = None,
) -> LossResult:
    """Loss value plus analytic gradients for the given loss kind."""
    kind = canonical_loss_kind(kind)
    cfg = cfg if cfg is not None else MarginConfig()
    value = losses.evaluate_loss(kind, batch, weights, cfg)

    if kind == "softmax":
        grad_x, grad_w = _softmax_loss_backward(batch, weights)
    elif kind == "norm_softmax":
        grad_x, grad_w = _cosine_softmax_backward(batch, weights, cfg.s1, 0.0, "none")
    elif kind == "cosface":
        grad_x, grad_w = _cosine_softmax_backward(
            batch, weights, cfg.s1, cfg.m, "additive_cosine"
        )
    elif kind == "arcface":
        grad_x, grad_w = _cosine_softmax_backward(
            batch, weights, cfg.s1, cfg.m, "additive_angle"
        )
    elif kind == "mixface":
        grad_x, grad_w = _cosine_softmax_backward(
            batch, weights, cfg.s1, cfg.m, "additive_angle"
        )
        grad_x = grad_x + _sn_pair_backward(batch, cfg.s2)
    elif kind == "snpair":
        grad_x, grad_w = _sn_pair_backward(batch, cfg.s2), None
    else:
        grad_x, grad_w = _n_pair_backward(batch), None

    return LossResult(value=value, grad_embeddings=grad_x, grad_weights=grad_w)


def max_rel_error(f, arrays, analytic_grads, h: float = 1e-5) -> float:
    """Max relative error between analytic gradients and central differences.

    Perturbs every coordinate of every array with a relative step
    h*(1+|x|); the relative error denominator is max(1, |analytic|,
    |numeric|).  `f` is called with the perturbed arrays positionally.
    """
    if len(arrays) != len(analytic_grads):
        raise InvalidConfig("one analytic gradient per input array required")
    work = [np.array(a, dtype=np.float64, copy=True) for a in arrays]
    worst = 0.0
    for arr, grad in zip(work, analytic_grads):
        flat, gflat = arr.ravel(), np.asarray(grad).ravel()
        if flat.size != gflat.size:
            raise InvalidConfig("analytic gradient shape mismatch")
        for i in range(flat.size):
            orig = flat[i]
            step = h * (1.0 + abs(orig))
            try:
                flat[i] = orig + step
                f_plus = f(*work)
                flat[i] = orig - step
                f_minus = f(*work)
            except LossLabError as exc:
                raise PerturbationOutOfDomain(
                    f"forward failed at perturbed coordinate {i}: {exc}"
                ) from exc
            finally:
                flat[i] = orig
            numeric = (f_plus - f_minus) / (2.0 * step)
            err = abs(gflat[i] - numeric) / max(1.0, abs(gflat[i]), abs(numeric))
            worst = max(worst, err)
    return worst


def finite_difference_check(
    kind: str,
    batch: EmbeddingBatch,
    weights: ClassWeightMatrix | None = None,
    cfg: MarginConfig | None = None,
    h: float = 1e-5,
) -> float:
    """Verify backward() against central differences of the forward loss.

    Returns the max relative error over all embedding (and, when the loss
    uses them, class weight) coordinates.
    """
    kind = canonical_loss_kind(kind)
    cfg = cfg if cfg is not None else MarginConfig()
    result = backward(kind, batch, weights, cfg)

    if kind in CLASSIFICATION_KINDS:
        def f(x, w):
            return losses.evaluate_loss(
                kind, EmbeddingBatch(x, batch.labels), ClassWeightMatrix(w), cfg
            )

        return max_rel_error(
            f,
            [batch.vectors, weights.weights],
            [result.grad_embeddings, result.grad_weights],
            h=h,
        )

    def f(x):
        return losses.evaluate_loss(kind, EmbeddingBatch(x, batch.labels), None, cfg)

    return max_rel_error(f, [batch.vectors], [result.grad_embeddings], h=h)


def near_clamp(
    kind: str,
    batch: EmbeddingBatch,
    weights: ClassWeightMatrix | None = None,
    tol: float = 1e-5,
) -> bool:
    """True if any cosine the loss consumes sits within tol of +-1.

    Finite differences are unreliable across the arccos clamp kink, so
    random gradient sweeps skip such instances.  Pair diagonals are not
    consumed (upper triangle only) and are ignored here.
    """
    kind = canonical_loss_kind(kind)
    checks = []
    if kind in CLASSIFICATION_KINDS and kind != "softmax":
        cos = np.clip(normalize_rows(batch.vectors) @ normalize_rows(weights.weights).T, -1, 1)
        checks.append(cos)
    if kind in ("snpair", "mixface"):
        sim = similarity_matrix(batch).values
        iu, ju = np.triu_indices(batch.n, k=1)
        checks.append(sim[iu, ju])
    if not checks:
        return False
    return any(np.any(np.abs(c) > 1.0 - tol) for c in checks)
