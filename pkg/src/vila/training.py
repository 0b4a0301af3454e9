"""Shared mini-batch training loop used by every classifier in the package."""

from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from vila.nn.encoder import Params
from vila.nn.optim import OptimState, optimizer_step

log = logging.getLogger(__name__)

LossFn = Callable[[Params, list, Optional[np.random.Generator]], tuple[float, Params]]


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 20
    batch_size: int = 8
    lr: float = 1e-3
    weight_decay: float = 0.01
    warmup_fraction: float = 0.05
    beta1: float = 0.9
    beta2: float = 0.999
    seed: int = 0
    # stop early once eval-mode training accuracy reaches this value
    stop_at_train_accuracy: Optional[float] = None
    check_every: int = 10

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError("epochs and batch_size must be >= 1")
        if self.lr <= 0:
            raise ValueError("lr must be > 0")


@dataclass
class TrainLog:
    step_losses: list = field(default_factory=list)
    epoch_losses: list = field(default_factory=list)
    dev_macro_f1: list = field(default_factory=list)
    train_accuracy: list = field(default_factory=list)
    best_epoch: int = -1
    epochs_run: int = 0
    skipped_steps: int = 0

    def to_dict(self) -> dict:
        return asdict(self)


class TrainingDiverged(RuntimeError):
    def __init__(self, step: int, loss: float):
        super().__init__(f"non-finite loss {loss} at step {step}")
        self.step = step


def fit(
    params: Params,
    examples: Sequence,
    loss_fn: LossFn,
    hyper: TrainConfig,
    dev_score: Optional[Callable[[Params], float]] = None,
    train_accuracy: Optional[Callable[[Params], float]] = None,
) -> tuple[Params, TrainLog]:
    """Train ``params`` in place over shuffled mini-batches of ``examples``.

    When ``dev_score`` is given it runs after every epoch and the returned
    params are those of the best-scoring epoch.
    """
    if not examples:
        raise ValueError("training set is empty")
    n_batches = math.ceil(len(examples) / hyper.batch_size)
    state = OptimState(
        lr=hyper.lr,
        beta1=hyper.beta1,
        beta2=hyper.beta2,
        weight_decay=hyper.weight_decay,
        warmup_fraction=hyper.warmup_fraction,
        total_steps=hyper.epochs * n_batches,
    )
    rng = np.random.default_rng(hyper.seed)
    record = TrainLog()
    best: Optional[Params] = None
    best_score = -math.inf

    for epoch in range(hyper.epochs):
        order = rng.permutation(len(examples))
        total = 0.0
        for b in range(n_batches):
            batch = [examples[i] for i in order[b * hyper.batch_size : (b + 1) * hyper.batch_size]]
            loss, grads = loss_fn(params, batch, rng)
            if not math.isfinite(loss):
                raise TrainingDiverged(state.step + state.skipped + 1, loss)
            optimizer_step(params, grads, state)
            record.step_losses.append(round(loss, 12))
            total += loss
        record.epoch_losses.append(total / n_batches)
        record.epochs_run = epoch + 1

        if dev_score is not None:
            score = float(dev_score(params))
            record.dev_macro_f1.append(score)
            if score > best_score:
                best_score, record.best_epoch = score, epoch
                best = {k: v.copy() for k, v in params.items()}

        if hyper.stop_at_train_accuracy is not None and train_accuracy is not None:
            last = epoch + 1 == hyper.epochs
            if (epoch + 1) % hyper.check_every == 0 or last:
                acc = float(train_accuracy(params))
                record.train_accuracy.append((epoch + 1, acc))
                log.debug("epoch %d train accuracy %.4f", epoch + 1, acc)
                if acc >= hyper.stop_at_train_accuracy:
                    break

    record.skipped_steps = state.skipped
    if best is not None:
        params.clear()
        params.update(best)
    else:
        record.best_epoch = record.epochs_run - 1
    return params, record
