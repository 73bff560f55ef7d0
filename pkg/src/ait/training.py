"""Optimization loop: Adam with bias correction, periodic cosine
learning-rate annealing, early stopping on validation loss, and
deterministic epoch shuffling.  The loop always hands back the
parameters of the best validation epoch, not the last one.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .data import Dataset, make_batches
from .errors import ConfigError, ContractError
from .numerics import ParameterSet, Tape, Tensor, backward

__all__ = [
    "TrainConfig",
    "AdamState",
    "cosine_lr",
    "adam_step",
    "EpochRecord",
    "TrainReport",
    "evaluate_loss",
    "fit",
]


@dataclass
class TrainConfig:
    lr0: float = 1e-3
    batch_size: int = 32
    max_epochs: int = 1000
    patience: int = 40
    cosine_period: int = 40
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    seed: int = 0

    def validate(self) -> None:
        if min(self.lr0, self.batch_size, self.max_epochs,
               self.patience, self.cosine_period) <= 0:
            raise ConfigError("training: lr0, batch_size, max_epochs, patience and "
                              "cosine_period must all be positive")
        if self.patience > self.max_epochs:
            raise ConfigError("training: patience must not exceed max_epochs")
        if not (0 <= self.adam_beta1 < 1 and 0 <= self.adam_beta2 < 1):
            raise ConfigError("training: adam betas must lie in [0, 1)")
        if self.adam_eps <= 0:
            raise ConfigError("training: adam_eps must be positive")


def cosine_lr(epoch: int, config: TrainConfig) -> float:
    """Periodic cosine annealing from lr0 down to 0 over cosine_period
    epochs, restarting each period."""
    if epoch < 0:
        raise ConfigError("cosine_lr: epoch must be >= 0")
    t = config.cosine_period
    phase = (epoch % t) / t
    return 0.5 * config.lr0 * (1.0 + np.cos(np.pi * phase))


class AdamState:
    """First/second moment accumulators plus the shared step counter."""

    def __init__(self, params: ParameterSet, config: TrainConfig):
        self.beta1 = config.adam_beta1
        self.beta2 = config.adam_beta2
        self.eps = config.adam_eps
        self.step = 0
        self.m = {name: np.zeros_like(t.data) for name, t in params.items()}
        self.v = {name: np.zeros_like(t.data) for name, t in params.items()}


def adam_step(params: ParameterSet, grads: dict[str, Tensor],
              state: AdamState, lr: float) -> None:
    """One bias-corrected update, applied to parameters in place."""
    state.step += 1
    bc1 = 1.0 - state.beta1 ** state.step
    bc2 = 1.0 - state.beta2 ** state.step
    for name, p in params.items():
        g = grads[name].data
        if np.isnan(g).any():
            raise ContractError(f"adam_step: NaN gradient for parameter {name!r}")
        m = state.m[name]
        v = state.v[name]
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * (g * g)
        p.data -= lr * (m / bc1) / (np.sqrt(v / bc2) + state.eps)


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    val_loss: float
    lr: float
    seconds: float


@dataclass
class TrainReport:
    epochs: list[EpochRecord] = field(default_factory=list)
    best_epoch: int = 0
    best_val_loss: float = float("inf")
    initial_val_loss: float = float("nan")
    stopping_reason: str = ""

    def lr_trace(self) -> list[float]:
        return [rec.lr for rec in self.epochs]

    def to_dict(self, include_timing: bool = True) -> dict:
        rows = []
        for rec in self.epochs:
            row = {"epoch": rec.epoch, "train_loss": rec.train_loss,
                   "val_loss": rec.val_loss, "lr": rec.lr}
            if include_timing:
                row["seconds"] = rec.seconds
            rows.append(row)
        return {
            "epochs": rows,
            "best_epoch": self.best_epoch,
            "best_val_loss": self.best_val_loss,
            "initial_val_loss": self.initial_val_loss,
            "stopping_reason": self.stopping_reason,
        }


def _batch_sample_weight(batch) -> int:
    """Number of samples in the batch that carry at least one query."""
    return int(((batch.query_mask.sum(axis=-1) > 0).sum(axis=-1) > 0).sum())


def evaluate_loss(model, dataset: Dataset, batch_size: int) -> float:
    """Full-dataset nested-mean loss, batched without shuffling and
    aggregated so the result is independent of the batch size."""
    total, weight = 0.0, 0
    for batch in make_batches(dataset, batch_size):
        w = _batch_sample_weight(batch)
        if w == 0:
            continue
        total += float(model.loss(batch)) * w
        weight += w
    if weight == 0:
        raise ContractError("evaluate_loss: dataset has no queries")
    return total / weight


def fit(model, train: Dataset, val: Dataset, config: TrainConfig,
        log=print) -> tuple[dict[str, np.ndarray], TrainReport]:
    """Train until early stopping or max_epochs.

    Each epoch: deterministic reshuffle from (seed, epoch), one Adam
    step per batch at the cosine-annealed rate, then a full validation
    pass.  Returns the best-epoch parameter snapshot (also restored into
    the model) and the per-epoch report.
    """
    config.validate()
    if not len(train) or not len(val):
        raise ConfigError("fit: train and val splits must be nonempty")

    params = model.param_set
    state = AdamState(params, config)
    report = TrainReport()
    report.initial_val_loss = evaluate_loss(model, val, config.batch_size)

    best_values = params.snapshot()
    report.stopping_reason = "max_epochs"

    for epoch in range(1, config.max_epochs + 1):
        lr = cosine_lr(epoch - 1, config)
        started = time.perf_counter()
        batches = make_batches(train, config.batch_size,
                               shuffle_seed=(config.seed, epoch))
        loss_sum, loss_weight = 0.0, 0
        for batch in batches:
            if batch.query_mask.sum() == 0:
                log(f"warning: skipping batch with no queries (epoch {epoch})")
                continue
            with Tape():
                loss = model.loss(batch)
            grads = backward(loss, params)
            adam_step(params, grads, state, lr)
            w = _batch_sample_weight(batch)
            loss_sum += float(loss) * w
            loss_weight += w
        if loss_weight == 0:
            raise ConfigError("fit: every batch was skipped; no trainable queries")
        train_loss = loss_sum / loss_weight
        val_loss = evaluate_loss(model, val, config.batch_size)
        seconds = time.perf_counter() - started
        log(f"epoch={epoch} train_loss={train_loss:.6f} val_loss={val_loss:.6f} "
            f"lr={lr:.6g} seconds={seconds:.2f}")
        report.epochs.append(EpochRecord(epoch, train_loss, val_loss, lr, seconds))

        if val_loss < report.best_val_loss:
            report.best_val_loss = val_loss
            report.best_epoch = epoch
            best_values = params.snapshot()
        elif epoch - report.best_epoch >= config.patience:
            report.stopping_reason = "early_stop"
            break

    params.restore(best_values)
    return best_values, report
