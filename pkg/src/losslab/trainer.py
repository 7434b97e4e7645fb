"""Training loop: small MLP encoder + SGD with momentum and warmup-cosine LR.

The encoder is two affine layers with a ReLU in between.  Gradients flow
from the hand-written loss backward passes through the encoder by ordinary
backprop; there is no autodiff framework anywhere.  Class weights (for the
classification losses) are plain SGD parameters whose rows are re-projected
onto the unit sphere after every update, so the cosine logits always see
unit weight rows.
"""

from __future__ import annotations

import json
import math
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import InsufficientSamples, InvalidConfig, NonFiniteLoss
from .evaluator import verify
from .geometry import ClassWeightMatrix, EmbeddingBatch, normalize_rows
from .gradients import backward
from .losses import (
    CLASSIFICATION_KINDS,
    MarginConfig,
    canonical_loss_kind,
    derive_unified_scale,
)
from .synth import TEST_SET_IDS, DatasetSplit, SampleSet

SAMPLER_KINDS = ("uniform", "positive_pair")

CHECKPOINT_FORMAT = "losslab-checkpoint-v1"


class Encoder:
    """Two affine layers with a rectifier between: d_in -> hidden -> d_out."""

    def __init__(self, w1, b1, w2, b2):
        self.w1 = np.asarray(w1, dtype=np.float64)
        self.b1 = np.asarray(b1, dtype=np.float64)
        self.w2 = np.asarray(w2, dtype=np.float64)
        self.b2 = np.asarray(b2, dtype=np.float64)

    @classmethod
    def init(cls, d_in: int, hidden: int, d_out: int, rng) -> "Encoder":
        # Weights uniform in +-sqrt(6/(fan_in+fan_out)); biases +-1/sqrt(fan_in).
        lim1 = math.sqrt(6.0 / (d_in + hidden))
        lim2 = math.sqrt(6.0 / (hidden + d_out))
        return cls(
            w1=rng.uniform(-lim1, lim1, (hidden, d_in)),
            b1=rng.uniform(-1.0, 1.0, hidden) / math.sqrt(d_in),
            w2=rng.uniform(-lim2, lim2, (d_out, hidden)),
            b2=rng.uniform(-1.0, 1.0, d_out) / math.sqrt(hidden),
        )

    @property
    def d_in(self) -> int:
        return self.w1.shape[1]

    @property
    def d_out(self) -> int:
        return self.w2.shape[0]

    def forward(self, x: np.ndarray):
        pre = x @ self.w1.T + self.b1
        h = np.maximum(pre, 0.0)
        out = h @ self.w2.T + self.b2
        return out, (x, pre, h)

    def embed(self, x: np.ndarray) -> np.ndarray:
        return self.forward(np.asarray(x, dtype=np.float64))[0]

    def backward(self, cache, grad_out: np.ndarray) -> dict:
        x, pre, h = cache
        grad_h = grad_out @ self.w2
        grad_pre = grad_h * (pre > 0.0)
        return {
            "w2": grad_out.T @ h,
            "b2": grad_out.sum(axis=0),
            "w1": grad_pre.T @ x,
            "b1": grad_pre.sum(axis=0),
        }

    def params(self) -> dict:
        return {"w1": self.w1, "b1": self.b1, "w2": self.w2, "b2": self.b2}


@dataclass(frozen=True)
class TrainConfig:
    """Optimization recipe; defaults follow the reference training setup."""

    batch_size: int = 512
    epochs: int = 20
    warmup_epochs: int = 3
    lr0: float = 0.1
    momentum: float = 0.9
    weight_decay: float = 5e-4
    loss_kind: str = "arcface"
    margin: MarginConfig = field(default_factory=MarginConfig)
    epsilon: float | None = None
    sampler_kind: str | None = None  # None: uniform for classification, pairs otherwise
    hidden: int = 64
    embed_dim: int = 16
    seed: int = 0

    def __post_init__(self):
        if self.batch_size < 2:
            raise InvalidConfig("batch_size must be >= 2")
        if self.epochs < 1 or not (0 <= self.warmup_epochs < self.epochs):
            raise InvalidConfig("need 0 <= warmup_epochs < epochs and epochs >= 1")
        if self.lr0 <= 0:
            raise InvalidConfig("lr0 must be positive")
        if not (0.0 <= self.momentum < 1.0):
            raise InvalidConfig("momentum must lie in [0, 1)")
        if self.weight_decay < 0:
            raise InvalidConfig("weight_decay must be >= 0")
        if self.sampler_kind is not None and self.sampler_kind not in SAMPLER_KINDS:
            raise InvalidConfig(f"sampler_kind must be one of {SAMPLER_KINDS}")
        if self.hidden < 1 or self.embed_dim < 2:
            raise InvalidConfig("need hidden >= 1 and embed_dim >= 2")
        object.__setattr__(self, "loss_kind", canonical_loss_kind(self.loss_kind))

    @property
    def resolved_sampler(self) -> str:
        if self.sampler_kind is not None:
            return self.sampler_kind
        if self.loss_kind in ("npair", "snpair", "mixface"):
            return "positive_pair"
        return "uniform"


def lr_schedule(epoch_progress: float, cfg: TrainConfig) -> float:
    """Linear ramp 0 -> lr0 over warmup, then cosine annealing to 0."""
    p = min(max(epoch_progress, 0.0), 1.0)
    warm = cfg.warmup_epochs / cfg.epochs
    if warm > 0.0 and p < warm:
        return cfg.lr0 * p / warm
    t = (p - warm) / (1.0 - warm)
    return cfg.lr0 * 0.5 * (1.0 + math.cos(math.pi * t))


def sample_batch(dataset: SampleSet, cfg: TrainConfig, rng):
    """Draw one batch: uniform rows, or identity pairs for metric losses."""
    n = dataset.n
    if n == 0:
        raise InsufficientSamples("dataset is empty")
    if cfg.resolved_sampler == "uniform":
        idx = rng.choice(n, size=cfg.batch_size, replace=n < cfg.batch_size)
        return dataset.features[idx], dataset.labels[idx]

    if cfg.batch_size % 2:
        raise InvalidConfig("positive_pair sampling needs an even batch_size")
    ids, inverse = np.unique(dataset.labels, return_inverse=True)
    groups = [np.flatnonzero(inverse == i) for i in range(ids.size)]
    eligible = [g for g in groups if g.size >= 2]
    if not eligible:
        raise InsufficientSamples(
            "positive_pair sampling needs an identity with at least 2 samples"
        )
    half = cfg.batch_size // 2
    chosen = rng.choice(len(eligible), size=half, replace=len(eligible) < half)
    idx = np.concatenate([rng.choice(eligible[c], size=2, replace=False) for c in chosen])
    return dataset.features[idx], dataset.labels[idx]


def expected_negative_pairs(sampler: str, batch_size: int, n_classes: int) -> float:
    """Expected count of negative pairs in one batch, per sampler kind."""
    total = batch_size * (batch_size - 1) / 2.0
    if sampler == "positive_pair":
        return total - batch_size / 2.0
    return total * (1.0 - 1.0 / n_classes)


@dataclass
class TrainResult:
    encoder: Encoder
    class_weights: np.ndarray | None
    log: list
    header: dict


def train_on_samples(
    dataset: SampleSet,
    cfg: TrainConfig,
    *,
    n_classes: int,
    eval_sets: dict | None = None,
    train_id: str = "",
) -> TrainResult:
    """Core SGD loop over one sample set; optional per-epoch verification."""
    kind = cfg.loss_kind
    if n_classes < 2:
        raise InvalidConfig("need at least 2 classes")
    rng = np.random.default_rng((cfg.seed, 301))
    encoder = Encoder.init(dataset.features.shape[1], cfg.hidden, cfg.embed_dim, rng)

    margin = cfg.margin
    header = {
        "loss": kind,
        "train_id": train_id,
        "sampler": cfg.resolved_sampler,
        "classes": int(n_classes),
        "batch_size": cfg.batch_size,
        "epochs": cfg.epochs,
        "seed": cfg.seed,
        "epsilon": cfg.epsilon,
    }
    if cfg.epsilon is not None:
        l_expected = expected_negative_pairs(cfg.resolved_sampler, cfg.batch_size, n_classes)
        scale = derive_unified_scale(cfg.epsilon, n_classes, l_expected, margin.m)
        margin = MarginConfig(s1=scale.derived_s1, s2=scale.derived_s2, m=margin.m)
        header["expected_negatives"] = l_expected
    header.update({"s1": margin.s1, "s2": margin.s2, "m": margin.m})

    weights = None
    if kind in CLASSIFICATION_KINDS:
        weights = normalize_rows(rng.standard_normal((n_classes, cfg.embed_dim)))

    params = encoder.params()
    velocity = {name: np.zeros_like(p) for name, p in params.items()}
    if weights is not None:
        velocity["class_weights"] = np.zeros_like(weights)

    steps_per_epoch = max(1, dataset.n // cfg.batch_size)
    total_steps = cfg.epochs * steps_per_epoch
    log = []
    step_index = 0
    for epoch in range(cfg.epochs):
        t0 = time.perf_counter()
        losses_seen = []
        lr = cfg.lr0
        for _ in range(steps_per_epoch):
            lr = lr_schedule((step_index + 0.5) / total_steps, cfg)
            feats, labels = sample_batch(dataset, cfg, rng)
            emb, cache = encoder.forward(feats)
            if not np.all(np.isfinite(emb)):
                raise NonFiniteLoss(f"non-finite embeddings at step {step_index}")
            batch = EmbeddingBatch(emb, labels)
            w_obj = ClassWeightMatrix(weights) if weights is not None else None
            result = backward(kind, batch, w_obj, margin)
            if not math.isfinite(result.value):
                raise NonFiniteLoss(f"non-finite loss at step {step_index}")
            losses_seen.append(result.value)

            grads = encoder.backward(cache, result.grad_embeddings)
            for name, p in params.items():
                g = grads[name] + cfg.weight_decay * p
                velocity[name] = cfg.momentum * velocity[name] + g
                p -= lr * velocity[name]
            if weights is not None:
                g = result.grad_weights + cfg.weight_decay * weights
                velocity["class_weights"] = cfg.momentum * velocity["class_weights"] + g
                weights = normalize_rows(weights - lr * velocity["class_weights"])
            step_index += 1

        row = {
            "epoch": epoch + 1,
            "lr": lr,
            "mean_loss": float(np.mean(losses_seen)),
        }
        if eval_sets:
            for name, pairs in eval_sets.items():
                row[name.lower()] = verify(encoder, pairs).accuracy
        row["wall_ms"] = (time.perf_counter() - t0) * 1000.0
        log.append(row)

    return TrainResult(encoder=encoder, class_weights=weights, log=log, header=header)


def train(split: DatasetSplit, train_id: str, cfg: TrainConfig) -> TrainResult:
    """Train on one variance row and score every Q set after each epoch."""
    if train_id not in split.train_indices:
        raise InvalidConfig(f"unknown train set {train_id!r}")
    eval_sets = {qid: split.pair_collection(qid) for qid in TEST_SET_IDS}
    return train_on_samples(
        split.train_set(train_id),
        cfg,
        n_classes=split.n_train_identities,
        eval_sets=eval_sets,
        train_id=train_id,
    )


# ---------------------------------------------------------------------------
# Checkpoints: one JSON header line (shapes + meta), then raw <f8 bytes.
# ---------------------------------------------------------------------------


def save_checkpoint(path, encoder: Encoder, class_weights=None, meta: dict | None = None):
    arrays = [("w1", encoder.w1), ("b1", encoder.b1), ("w2", encoder.w2), ("b2", encoder.b2)]
    if class_weights is not None:
        arrays.append(("class_weights", np.asarray(class_weights, dtype=np.float64)))
    header = {
        "format": CHECKPOINT_FORMAT,
        "arrays": [[name, list(a.shape)] for name, a in arrays],
        "meta": meta or {},
    }
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        fh.write(json.dumps(header, sort_keys=True).encode("utf-8") + b"\n")
        for _, a in arrays:
            fh.write(np.ascontiguousarray(a, dtype="<f8").tobytes())
    return path


def load_checkpoint(path):
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"no checkpoint at {path}")
    with open(path, "rb") as fh:
        header = json.loads(fh.readline().decode("utf-8"))
        if header.get("format") != CHECKPOINT_FORMAT:
            raise InvalidConfig(f"unsupported checkpoint format {header.get('format')!r}")
        tensors = {}
        for name, shape in header["arrays"]:
            count = int(np.prod(shape)) if shape else 1
            buf = fh.read(count * 8)
            tensors[name] = np.frombuffer(buf, dtype="<f8").reshape(shape).copy()
    encoder = Encoder(tensors["w1"], tensors["b1"], tensors["w2"], tensors["b2"])
    return encoder, tensors.get("class_weights"), header["meta"]


def write_metrics(path, result: TrainResult):
    """JSON-lines metric log: one header object, then one object per epoch."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(json.dumps({"type": "header", **result.header}, sort_keys=True) + "\n")
        for row in result.log:
            fh.write(json.dumps(row, sort_keys=True) + "\n")
    return path
