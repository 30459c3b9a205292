"""Patient-specific training loop.

Each epoch draws a class-balanced subset (all ictal and crossing segments,
interictal subsampled to the same count), shuffles it with the run's seeded
generator and steps Nadam over mini-batches. The parameters scoring the
lowest validation error are kept.
"""
from __future__ import annotations

import os
from dataclasses import dataclass, field

import numpy as np
import pandas as pd

from model.network import init_params, loss_and_grads, predict
from model.optimizer import nadam_step
from recordings.signal_io import TAG_CROSSING, TAG_ICTAL, TAG_INTERICTAL
from shared.config import BATCH_SIZE, BETA1, BETA2, DEFAULT_SEED, EPOCHS, LEARNING_RATE, NADAM_EPS
from shared.console import log
from shared.errors import DataError

REQUIRED_TAGS = (TAG_INTERICTAL, TAG_ICTAL, TAG_CROSSING)


@dataclass
class TrainConfig:
    epochs: int = EPOCHS
    batch_size: int = BATCH_SIZE
    lr: float = LEARNING_RATE
    beta1: float = BETA1
    beta2: float = BETA2
    eps: float = NADAM_EPS
    seed: int = DEFAULT_SEED
    balance: bool = True


@dataclass
class TrainResult:
    params: object
    final_params: object
    best_epoch: int
    best_score: float
    history: list = field(default_factory=list)

    def history_frame(self):
        return pd.DataFrame(self.history, columns=["epoch", "loss", "eval_loss", "val_error", "n_samples"])


def balanced_indices(tags, rng):
    tags = np.asarray(tags)
    positive = np.flatnonzero(tags != TAG_INTERICTAL)
    interictal = np.flatnonzero(tags == TAG_INTERICTAL)
    if len(interictal) > len(positive) > 0:
        interictal = np.sort(rng.choice(interictal, size=len(positive), replace=False))
    return np.concatenate([interictal, positive])


def crossing_error(params, model_cfg, dataset):
    """Mean |P_ictal - P_hat_ictal| in percent over crossing samples
    (all samples when the set has no crossing segments)."""
    mask = np.asarray(dataset.tags) == TAG_CROSSING
    if not mask.any():
        mask = np.ones(len(dataset), dtype=bool)
    subset = dataset.subset(np.flatnonzero(mask))
    probs = predict(subset.features, params, model_cfg)
    return float(np.mean(np.abs(subset.labels[:, 1] - probs[:, 1])) * 100.0)


def dataset_loss(params, model_cfg, dataset, batch_size=256):
    total = 0.0
    for i in range(0, len(dataset), batch_size):
        chunk = dataset.subset(np.arange(i, min(i + batch_size, len(dataset))))
        probs = predict(chunk.features, params, model_cfg)
        clipped = np.clip(probs, 1e-7, 1 - 1e-7)
        y = chunk.labels
        total += float(-(y * np.log(clipped) + (1 - y) * np.log(1 - clipped)).sum())
    return total / len(dataset)


def train_epoch(params, dataset, indices, model_cfg, train_cfg):
    """One pass over `indices` in the given order; returns the mean batch loss."""
    losses = []
    weights = []
    for i in range(0, len(indices), train_cfg.batch_size):
        batch = dataset.subset(indices[i:i + train_cfg.batch_size])
        value, grads = loss_and_grads(batch.features, batch.labels, params, model_cfg)
        nadam_step(params, grads, train_cfg.lr, train_cfg.beta1, train_cfg.beta2, train_cfg.eps)
        losses.append(value)
        weights.append(len(batch))
    return float(np.average(losses, weights=weights))


def check_dataset(dataset):
    if dataset is None or len(dataset) == 0:
        raise DataError("training set is empty")
    missing = [t for t in REQUIRED_TAGS if t not in dataset.tag_set()]
    if missing:
        raise DataError(f"training set lacks {', '.join(missing)} segments")


def train(dataset, model_cfg, train_cfg=None, validation=None, validator=None, history_path=None):
    """Train from a seeded init and return the best-scoring parameters.

    `validator(params) -> float` overrides the default score, the crossing
    error on `validation` (or on the training set when none is given).
    """
    train_cfg = train_cfg or TrainConfig()
    check_dataset(dataset)
    if train_cfg.epochs < 1:
        raise DataError("epochs must be at least 1")

    rng = np.random.default_rng([train_cfg.seed, 1])
    params = init_params(model_cfg, train_cfg.seed)
    score_set = validation if validation is not None else dataset
    score = validator or (lambda p: crossing_error(p, model_cfg, score_set))

    best, best_epoch, best_score = None, 0, np.inf
    history = []
    for epoch in range(1, train_cfg.epochs + 1):
        if train_cfg.balance:
            indices = balanced_indices(dataset.tags, rng)
        else:
            indices = np.arange(len(dataset))
        indices = rng.permutation(indices)

        mean_loss = train_epoch(params, dataset, indices, model_cfg, train_cfg)
        eval_loss = dataset_loss(params, model_cfg, dataset)
        val_error = float(score(params))
        history.append({
            "epoch": epoch,
            "loss": mean_loss,
            "eval_loss": eval_loss,
            "val_error": val_error,
            "n_samples": len(indices),
        })
        log('TRAIN', f"epoch {epoch}/{train_cfg.epochs} loss {mean_loss:.4f} eval {eval_loss:.4f} val_err {val_error:.2f}%")

        if val_error < best_score:
            best, best_epoch, best_score = params.copy(), epoch, val_error

    if not params.is_finite():
        raise DataError("training diverged to non-finite parameters")

    result = TrainResult(best, params, best_epoch, best_score, history)
    if history_path:
        os.makedirs(os.path.dirname(os.path.abspath(history_path)), exist_ok=True)
        result.history_frame().to_csv(history_path, index=False)
    log('TRAIN', f"best epoch {best_epoch} (val_err {best_score:.2f}%)")
    return result
