"""Elastic and fixed margin-penalty softmax losses with toy training and evaluation tools."""

from .errors import *  # noqa: F401,F403
from .losses import (
    EmbeddingBatch,
    Family,
    LossOutput,
    MarginSpec,
    apply_margin,
    cosine_logits,
    l2_normalize_rows,
    loss_backward,
    margin_softmax_loss,
    softmax_cross_entropy,
)
from .margins import MarginDraw, assign_margins_plus, make_rng, sample_margins, standard_normal
from .metrics import (
    BordaTable,
    GeometryReport,
    KFoldResult,
    PairProtocol,
    borda_count,
    cosine_scores,
    geometry_report,
    rank1,
    tar_at_far,
    verification_accuracy_kfold,
)
from .toy import MLP, SGD, ToyDataset, TrainConfig, TrainingLog, embed, forward, generate_toy_dataset, init_head, init_mlp, train

__version__ = "0.1.0"
