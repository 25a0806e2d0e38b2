"""Dataset splitting, inverse-frequency class weights and the CNN training loop."""
from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .errors import MissingClass, TooSmall
from .nn.layers import wce_loss
from .nn.model import ModelConfig, ModelState, adam_step, backward, forward, init_params, predict

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 0.001
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    epochs: int = 40
    batch_size: int = 256
    seed: int = 0
    split: tuple[float, float, float] = (0.80, 0.15, 0.05)

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if len(self.split) != 3 or abs(sum(self.split) - 1.0) > 1e-9 or min(self.split) < 0:
            raise ValueError(f"split fractions must be non-negative and sum to 1, got {self.split}")


def shuffle_split(data: int | Sequence, cfg: TrainConfig = TrainConfig()
                  ) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Seeded shuffle into train / validation / test index arrays.

    Sizes are floor(f_train * n), floor(f_val * n) and the remainder.
    """
    n = data if isinstance(data, int) else len(data)
    if n < 20:
        raise TooSmall(f"need at least 20 samples to split, got {n}")
    perm = np.random.default_rng(cfg.seed).permutation(n)
    n_train = math.floor(cfg.split[0] * n)
    n_val = math.floor(cfg.split[1] * n)
    return perm[:n_train], perm[n_train:n_train + n_val], perm[n_train + n_val:]


def class_weights(labels: Sequence[int], n_classes: int) -> np.ndarray:
    """w_c = n_total / (N * n_c)."""
    counts = np.bincount(np.asarray(labels, dtype=np.int64), minlength=n_classes)[:n_classes]
    if (counts == 0).any():
        missing = np.nonzero(counts == 0)[0].tolist()
        raise MissingClass(f"classes {missing} absent from the training labels")
    return counts.sum() / (n_classes * counts.astype(np.float64))


@dataclass
class EpochLog:
    epoch: int
    loss: float
    val_accuracy: float
    seconds: float


@dataclass
class TrainResult:
    final: ModelState
    best: ModelState
    best_epoch: int
    history: list[EpochLog] = field(default_factory=list)
    weights: np.ndarray | None = None
    first_batch_loss: float = float("nan")


def accuracy(state: ModelState, x: np.ndarray, y: np.ndarray) -> float:
    if len(y) == 0:
        return float("nan")
    return float(np.mean(predict(state, x)[1] == y))


def train_cnn(x_train: np.ndarray, y_train: np.ndarray, x_val: np.ndarray, y_val: np.ndarray, n_classes: int,
              cfg: TrainConfig = TrainConfig(), *, state: ModelState | None = None,
              on_epoch: Callable[[EpochLog], None] | None = None) -> TrainResult:
    """Adam on weighted cross-entropy; keeps the final and best-validation models.

    Inputs are normalized tensors (n, 1, 28, 28).  Each epoch reshuffles the
    training set from a stream seeded by ``cfg.seed``; the last partial batch
    is kept.
    """
    y_train = np.asarray(y_train, dtype=np.int64)
    y_val = np.asarray(y_val, dtype=np.int64)
    weights = class_weights(y_train, n_classes)
    if state is None:
        state = init_params(ModelConfig(n_classes=n_classes), seed=cfg.seed)
    rng = np.random.default_rng([cfg.seed, 1])
    w32 = weights.astype(state.dtype)
    result = TrainResult(final=state, best=state.copy(), best_epoch=0, weights=weights)
    best_acc = -1.0
    for epoch in range(1, cfg.epochs + 1):
        t0 = time.perf_counter()
        order = rng.permutation(len(y_train))
        total, seen = 0.0, 0
        for start in range(0, len(order), cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            logits, cache = forward(state, x_train[idx])
            loss, dlogits = wce_loss(logits, y_train[idx], w32)
            if seen == 0 and epoch == 1:
                result.first_batch_loss = loss
            grads = backward(state, cache, dlogits)
            adam_step(state, grads, cfg.lr, cfg.beta1, cfg.beta2, cfg.eps)
            total += loss * len(idx)
            seen += len(idx)
        val_acc = accuracy(state, x_val, y_val)
        entry = EpochLog(epoch, total / seen, val_acc, time.perf_counter() - t0)
        result.history.append(entry)
        log.info("epoch=%d loss=%.6f val_acc=%.6f seconds=%.3f", entry.epoch, entry.loss, entry.val_accuracy,
                 entry.seconds)
        if on_epoch is not None:
            on_epoch(entry)
        if val_acc > best_acc or math.isnan(val_acc):
            best_acc = val_acc
            result.best = state.copy()
            result.best_epoch = epoch
    return result
