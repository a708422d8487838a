"""Mini-batch training of the small CNN on hard or soft targets."""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .. import metrics
from ..errors import NumericError, ValidationError
from ..labels import aggregate_matrix, hard_targets, simulate_annotation_matrix
from .network import DTYPE, DEFAULT_CHANNELS, Network, init_network, soft_cross_entropy, softmax
from .optim import cosine_lr, sgd_step

log = logging.getLogger(__name__)

TARGET_MODES = ("gt-soft", "gt-hard", "sim-soft", "sim-hard")
LOG_HEADER = ("epoch", "train_loss", "val_macro_acc", "val_kl", "lr")


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 30
    batch_size: int = 128
    base_lr: float = 0.1
    weight_decay: float = 0.0005
    momentum: float = 0.9
    restart_epochs: int | None = None  # cosine with warm restarts every N epochs
    seed: int = 0
    target_mode: str = "gt-soft"
    annotators: int = 15
    flip_rate: float = 0.0
    channels: tuple[int, ...] = DEFAULT_CHANNELS

    def __post_init__(self):
        if self.target_mode not in TARGET_MODES:
            raise ValidationError(f"unknown target mode {self.target_mode!r}; choose from {TARGET_MODES}")
        if self.epochs < 1 or self.batch_size < 1:
            raise ValidationError("epochs and batch_size must be >= 1")
        if not self.base_lr > 0 or self.weight_decay < 0 or not 0 <= self.momentum < 1:
            raise ValidationError("base_lr must be positive, weight_decay >= 0, momentum in [0, 1)")
        if self.restart_epochs is not None and self.restart_epochs < 1:
            raise ValidationError("restart_epochs must be >= 1")
        if self.annotators < 1:
            raise ValidationError("annotators must be >= 1")


@dataclass(frozen=True)
class EpochRecord:
    epoch: int
    train_loss: float
    val_macro_acc: float
    val_kl: float
    lr: float

    def row(self) -> tuple[str, ...]:
        return (
            str(self.epoch),
            f"{self.train_loss:.6f}",
            f"{self.val_macro_acc:.6f}",
            f"{self.val_kl:.6f}",
            f"{self.lr:.8f}",
        )


def make_targets(
    labels: np.ndarray, mode: str, annotators: int = 15, seed=0, flip_rate: float = 0.0
) -> np.ndarray:
    """Training targets derived from exact label distributions.

    ``gt-*`` use the distributions directly (soft) or their argmax (hard);
    ``sim-*`` first draw ``annotators`` votes per item and aggregate them.
    """
    labels = np.asarray(labels, dtype=np.float64)
    if mode == "gt-soft":
        out = labels
    elif mode == "gt-hard":
        out = hard_targets(labels)
    elif mode in ("sim-soft", "sim-hard"):
        votes = simulate_annotation_matrix(labels, annotators, seed, flip_rate)
        out = aggregate_matrix(votes, labels.shape[1], mode[4:])
    else:
        raise ValidationError(f"unknown target mode {mode!r}")
    return out.astype(DTYPE)


def to_input(images: np.ndarray) -> np.ndarray:
    """uint8 RGB images -> float32 network input in [0, 1]."""
    return np.asarray(images, dtype=DTYPE) / DTYPE(255.0)


def predict(net: Network, images: np.ndarray, batch_size: int = 256) -> tuple[np.ndarray, np.ndarray]:
    """Class probabilities and GAP embeddings for a stack of uint8 images."""
    probs, feats = [], []
    for start in range(0, len(images), batch_size):
        logits, emb = net.forward(to_input(images[start : start + batch_size]))
        probs.append(softmax(logits.astype(np.float64)))
        feats.append(emb)
    if not probs:
        return np.zeros((0, net.num_classes)), np.zeros((0, net.embedding_dim), dtype=DTYPE)
    return np.concatenate(probs), np.concatenate(feats)


def train(
    dataset,
    config: TrainConfig,
    targets: np.ndarray | None = None,
    on_epoch: Callable[[EpochRecord], None] | None = None,
) -> tuple[Network, list[EpochRecord]]:
    """Train a fresh network on the dataset's train split.

    ``targets`` (one row per train item) overrides the targets derived from
    ``config.target_mode``. Returns the final-epoch network and one log
    record per epoch.
    """
    train_idx = dataset.indices("train")
    val_idx = dataset.indices("val")
    if len(train_idx) == 0:
        raise ValidationError("empty training split")
    if targets is None:
        targets = make_targets(
            dataset.labels[train_idx], config.target_mode, config.annotators, config.seed, config.flip_rate
        )
    targets = np.asarray(targets, dtype=DTYPE)
    if targets.shape != (len(train_idx), dataset.labels.shape[1]):
        raise ValidationError(f"targets shape {targets.shape} does not match the train split")

    x_train = to_input(dataset.images[train_idx])
    net = init_network(config.seed, dataset.labels.shape[1], config.channels, x_train.shape[3])
    rng = np.random.default_rng([config.seed, 0x5EED])
    n = len(train_idx)
    per_epoch = math.ceil(n / config.batch_size)
    total = per_epoch * config.epochs
    restart = None if config.restart_epochs is None else config.restart_epochs * per_epoch

    velocity = None
    records = []
    step = 0
    for epoch in range(config.epochs):
        order = rng.permutation(n)
        epoch_lr = cosine_lr(step, total, config.base_lr, restart)
        loss_sum = 0.0
        for start in range(0, n, config.batch_size):
            batch = order[start : start + config.batch_size]
            logits, _ = net.forward(x_train[batch], keep_cache=True)
            loss, dlogits = soft_cross_entropy(logits, targets[batch])
            if not math.isfinite(loss):
                raise NumericError(f"loss became non-finite at epoch {epoch}")
            grads = net.backward(dlogits)
            lr = cosine_lr(step, total, config.base_lr, restart)
            velocity = sgd_step(net.params, grads, velocity, lr, config.momentum, config.weight_decay)
            loss_sum += loss * len(batch)
            step += 1
        val_acc = val_kl = float("nan")
        if len(val_idx):
            probs, _ = predict(net, dataset.images[val_idx])
            val_acc, _ = metrics.macro_accuracy(probs, dataset.labels[val_idx])
            val_kl = metrics.mean_kl(dataset.labels[val_idx], probs)
        record = EpochRecord(epoch + 1, loss_sum / n, val_acc, val_kl, epoch_lr)
        records.append(record)
        log.debug("epoch %d loss %.4f val_acc %.4f val_kl %.4f", epoch, record.train_loss, val_acc, val_kl)
        if on_epoch is not None:
            on_epoch(record)
    return net, records


def write_log(path, records: list[EpochRecord]) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(LOG_HEADER)
        writer.writerows(r.row() for r in records)
