"""Losses, metrics and training loops."""

from ecgc.objective.losses import (
    LossConfig,
    contrastive_from_similarity,
    contrastive_loss,
    cosine_sim,
    cross_entropy,
    per_anchor_loss,
)
from ecgc.objective.metrics import accuracy, auroc, macro_auroc, per_class_auroc, softmax
from ecgc.objective.training import (
    MetricsReport,
    TrainConfig,
    probe_on_embeddings,
    train_baseline,
    train_pretext,
    train_probe,
)

__all__ = [
    "LossConfig",
    "MetricsReport",
    "TrainConfig",
    "accuracy",
    "auroc",
    "contrastive_from_similarity",
    "contrastive_loss",
    "cosine_sim",
    "cross_entropy",
    "macro_auroc",
    "per_anchor_loss",
    "per_class_auroc",
    "probe_on_embeddings",
    "softmax",
    "train_baseline",
    "train_pretext",
    "train_probe",
]
