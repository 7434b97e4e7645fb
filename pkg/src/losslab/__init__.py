"""losslab: angular-margin and pairwise metric losses with hand-written
gradients, a synthetic fine-grained-conditions dataset, and a
verification-style train/evaluate pipeline."""

from .geometry import (
    ClassWeightMatrix,
    EmbeddingBatch,
    SimilarityMatrix,
    cosine_matrix,
    log_sum_exp,
    normalize_rows,
    safe_arccos,
    similarity_matrix,
)
from .gradients import LossResult, backward, finite_difference_check
from .losses import (
    LOSS_KINDS,
    MarginConfig,
    PairSet,
    UnifiedScale,
    cosine_softmax_loss,
    derive_unified_scale,
    evaluate_loss,
    extract_pairs,
    mixface_loss,
    n_pair_loss,
    sn_pair_loss,
    softmax_loss,
)
from .synth import ConditionSpec, DatasetSplit, Universe, build_splits, generate_dataset
from .trainer import Encoder, TrainConfig, lr_schedule, sample_batch, train
from .evaluator import (
    HeatmapGrid,
    VerificationReport,
    heatmap,
    partition_means,
    single_condition_report,
    verify,
)

__version__ = "0.1.0"
