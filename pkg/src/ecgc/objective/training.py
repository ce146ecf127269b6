"""Training loops: contrastive pretraining, frozen linear probe, supervised baseline."""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from ecgc.data import CLASSES, Dataset
from ecgc.nn import ops
from ecgc.nn.checkpoint import save_checkpoint
from ecgc.nn.encoder import Encoder, EncoderConfig, LinearProbe
from ecgc.nn.optim import make_optimizer
from ecgc.nn.tensor import Tensor
from ecgc.objective.losses import LossConfig, contrastive_loss, cross_entropy
from ecgc.objective.metrics import accuracy, per_class_auroc, softmax
from ecgc.pairing import BatchBuilder, StrategySpec, batches_per_epoch, epoch_order

logger = logging.getLogger(__name__)

PHASES = ("pretrain", "probe", "baseline")
_PHASE_DEFAULTS = {
    "pretrain": dict(epochs=50, lr=1e-4, batch_size=64),
    "probe": dict(epochs=10, lr=1e-2, batch_size=64),
    "baseline": dict(epochs=50, lr=1e-4, batch_size=64),
}


@dataclass(frozen=True)
class TrainConfig:
    phase: str = "pretrain"
    epochs: int | None = None
    lr: float | None = None
    batch_size: int | None = None
    seed: int = 0
    optimizer: str = "adam"

    def __post_init__(self):
        if self.phase not in PHASES:
            raise ValueError(f"phase must be one of {PHASES}, got {self.phase!r}")
        for key, value in _PHASE_DEFAULTS[self.phase].items():
            if getattr(self, key) is None:
                object.__setattr__(self, key, value)
        if self.epochs < 1 or self.batch_size < 1 or not self.lr > 0:
            raise ValueError("epochs, batch_size and lr must be positive")

    def to_dict(self) -> dict:
        return dict(phase=self.phase, epochs=self.epochs, lr=self.lr, batch_size=self.batch_size, seed=self.seed, optimizer=self.optimizer)


REPORT_COLUMNS = ("row", "epoch", "loss", "val_auroc_macro", "auroc_macro", *(f"auroc_{c}" for c in CLASSES), "accuracy")


@dataclass
class MetricsReport:
    phase: str
    auroc_per_class: list[float] = field(default_factory=lambda: [math.nan] * len(CLASSES))
    auroc_macro: float = math.nan
    accuracy: float = math.nan
    loss_curve: list[tuple[int, float]] = field(default_factory=list)
    val_curve: list[tuple[int, float]] = field(default_factory=list)
    run_metadata: dict = field(default_factory=dict)

    @property
    def best_val_epoch(self) -> int | None:
        if not self.val_curve:
            return None
        return max(self.val_curve, key=lambda ev: (ev[1], -ev[0]))[0]

    def rows(self) -> list[dict]:
        val = dict(self.val_curve)
        out = [{"row": "epoch", "epoch": e, "loss": repr(float(v)), "val_auroc_macro": _fmt(val.get(e))} for e, v in self.loss_curve]
        summary = {"row": "summary", "auroc_macro": _fmt(self.auroc_macro), "accuracy": _fmt(self.accuracy)}
        summary.update({f"auroc_{c}": _fmt(a) for c, a in zip(CLASSES, self.auroc_per_class)})
        out.append(summary)
        return out

    def write_csv(self, path) -> Path:
        path = Path(path)
        with open(path, "w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=REPORT_COLUMNS, restval="", lineterminator="\n")
            w.writeheader()
            w.writerows(self.rows())
        return path

    @classmethod
    def read_csv(cls, path, phase: str = "") -> "MetricsReport":
        rep = cls(phase=phase)
        with open(path, newline="") as fh:
            for row in csv.DictReader(fh):
                if row["row"] == "epoch":
                    rep.loss_curve.append((int(row["epoch"]), float(row["loss"])))
                    if row["val_auroc_macro"]:
                        rep.val_curve.append((int(row["epoch"]), float(row["val_auroc_macro"])))
                elif row["row"] == "summary":
                    rep.auroc_macro = _parse(row["auroc_macro"])
                    rep.accuracy = _parse(row["accuracy"])
                    rep.auroc_per_class = [_parse(row[f"auroc_{c}"]) for c in CLASSES]
        return rep


def _fmt(v) -> str:
    return "" if v is None or (isinstance(v, float) and math.isnan(v)) else repr(float(v))


def _parse(s: str) -> float:
    return float(s) if s else math.nan


def _evaluate(probs: np.ndarray, labels: np.ndarray) -> tuple[list[float], float, float]:
    per = per_class_auroc(probs, labels, len(CLASSES))
    return per, float(np.mean(per)), accuracy(probs, labels)


# -- pretraining ----------------------------------------------------------------
def train_pretext(
    train: Dataset,
    strategy: StrategySpec,
    encoder_config: EncoderConfig,
    config: TrainConfig,
    loss_config: LossConfig = LossConfig(),
    stats=None,
    checkpoint_path=None,
) -> tuple[Encoder, MetricsReport]:
    """Minimize the contrastive loss over ``config.epochs`` passes of ``train``.

    The encoder is initialised from ``config.seed``. Returns the trained
    encoder and a report holding the per-epoch mean loss.
    """
    encoder = Encoder(replace(encoder_config, seed=config.seed))
    builder = BatchBuilder(train, strategy, min(config.batch_size, len(train)), seed=config.seed, stats=stats)
    opt = make_optimizer(config.optimizer, encoder.parameters(), config.lr)
    report = MetricsReport(phase="pretrain")
    for epoch in range(config.epochs):
        losses = []
        for k in range(len(builder)):
            batch = builder.build(epoch, k)
            z = encoder.project(encoder(batch.views))
            loss = contrastive_loss(z, batch.positive_mask, loss_config)
            opt.zero_grad()
            loss.backward()
            opt.step()
            losses.append(loss.item())
        report.loss_curve.append((epoch + 1, float(np.mean(losses))))
        logger.info("pretrain epoch %d/%d loss %.5f", epoch + 1, config.epochs, report.loss_curve[-1][1])
    report.run_metadata = {
        "strategy": strategy.to_dict(),
        "attribute_cutoff": builder.h,
        "encoder": encoder.config.to_dict(),
        "train": config.to_dict(),
        "loss": {"temperature": loss_config.temperature, "variant": loss_config.variant},
    }
    if checkpoint_path is not None:
        save_checkpoint(encoder, checkpoint_path)
    return encoder, report


# -- linear probe ---------------------------------------------------------------
def _standardizer(z: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    mu = z.mean(axis=0)
    sd = z.std(axis=0)
    sd[sd == 0] = 1.0
    return mu, sd


def probe_on_embeddings(
    z_train: np.ndarray,
    y_train: np.ndarray,
    z_test: np.ndarray,
    y_test: np.ndarray,
    config: TrainConfig,
    z_val: np.ndarray | None = None,
    y_val: np.ndarray | None = None,
) -> MetricsReport:
    """Fit a linear softmax classifier on fixed embeddings and evaluate it.

    Embeddings are standardized with train-split feature statistics (an
    affine map, so the classifier stays linear in the embedding).
    """
    z_train = np.asarray(z_train, dtype=np.float64)
    mu, sd = _standardizer(z_train)
    norm = lambda z: ((np.asarray(z, dtype=np.float64) - mu) / sd).astype(np.float32)  # noqa: E731
    xtr = norm(z_train)
    y_train = np.asarray(y_train, dtype=np.int64)
    probe = LinearProbe(embed_dim=xtr.shape[1], seed=config.seed)
    opt = make_optimizer(config.optimizer, probe.parameters(), config.lr)
    report = MetricsReport(phase="probe")
    n = len(xtr)
    bs = min(config.batch_size, n)
    for epoch in range(config.epochs):
        order = epoch_order(n, config.seed, epoch)
        losses = []
        for start in range(0, n, bs):
            idx = order[start : start + bs]
            loss = cross_entropy(probe(Tensor(xtr[idx])), y_train[idx])
            opt.zero_grad()
            loss.backward()
            opt.step()
            losses.append(loss.item())
        report.loss_curve.append((epoch + 1, float(np.mean(losses))))
        if z_val is not None and len(z_val):
            report.val_curve.append((epoch + 1, _safe_macro(softmax(probe(Tensor(norm(z_val))).data), y_val)))
    probs = softmax(probe(Tensor(norm(z_test))).data)
    report.auroc_per_class, report.auroc_macro, report.accuracy = _evaluate(probs, np.asarray(y_test))
    report.run_metadata = {"train": config.to_dict(), "best_val_epoch": report.best_val_epoch}
    return report


def _safe_macro(probs, labels) -> float:
    try:
        return _evaluate(probs, np.asarray(labels))[1]
    except Exception:  # a class absent from a small validation split
        return math.nan


def train_probe(
    encoder: Encoder,
    train: Dataset,
    test: Dataset,
    config: TrainConfig,
    val: Dataset | None = None,
) -> MetricsReport:
    """Linear probe on a frozen encoder; embeddings are computed once up front."""
    embed = lambda ds: encoder.embed(ds.signals(), batch_size=config.batch_size)  # noqa: E731
    z_val = embed(val) if val is not None and len(val) else None
    report = probe_on_embeddings(
        embed(train), train.labels, embed(test), test.labels, config,
        z_val=z_val, y_val=val.labels if z_val is not None else None,
    )
    report.run_metadata["encoder"] = encoder.config.to_dict()
    return report


# -- supervised baseline --------------------------------------------------------
def train_baseline(
    train: Dataset,
    test: Dataset,
    encoder_config: EncoderConfig,
    config: TrainConfig,
    val: Dataset | None = None,
) -> tuple[Encoder, MetricsReport]:
    """Encoder and linear head trained jointly with cross-entropy, no pretraining."""
    encoder = Encoder(replace(encoder_config, seed=config.seed))
    head = LinearProbe(embed_dim=encoder.config.embed_dim, seed=config.seed, dtype=encoder.config.dtype)
    head.attach(encoder)
    opt = make_optimizer(config.optimizer, encoder.encoder_params() + head.parameters(), config.lr)
    signals = train.signals()
    labels = train.labels
    n = len(train)
    bs = min(config.batch_size, n)
    report = MetricsReport(phase="baseline")

    def predict(ds: Dataset) -> np.ndarray:
        return softmax(head(Tensor(encoder.embed(ds.signals(), batch_size=2 * bs))).data)

    for epoch in range(config.epochs):
        order = epoch_order(n, config.seed, epoch)
        losses = []
        for k in range(batches_per_epoch(n, bs)):
            idx = order[k * bs : (k + 1) * bs]
            loss = cross_entropy(head(encoder(signals[idx])), labels[idx])
            opt.zero_grad()
            loss.backward()
            opt.step()
            losses.append(loss.item())
        report.loss_curve.append((epoch + 1, float(np.mean(losses))))
        if val is not None and len(val):
            report.val_curve.append((epoch + 1, _safe_macro(predict(val), val.labels)))
        logger.info("baseline epoch %d/%d loss %.5f", epoch + 1, config.epochs, report.loss_curve[-1][1])
    report.auroc_per_class, report.auroc_macro, report.accuracy = _evaluate(predict(test), test.labels)
    report.run_metadata = {
        "encoder": encoder.config.to_dict(),
        "train": config.to_dict(),
        "best_val_epoch": report.best_val_epoch,
    }
    return encoder, report
