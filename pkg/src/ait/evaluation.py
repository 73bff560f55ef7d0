"""Metrics with the nested-mean normalization, a wall-clock timing
harness, and export of realized weight matrices as plain numeric grids.

MSE and MAE average each variable's error over its queries first, then
over the queried variables of each sample, then over samples; this is
the same formula the training loss uses, and a cross-check between the
two is part of the test suite.
"""

from __future__ import annotations

import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .data import Dataset, NormStats, make_batches
from .errors import ContractError, ValidationError
from .training import TrainConfig

__all__ = [
    "MetricsReport",
    "TimingReport",
    "predictions_for_dataset",
    "metric_mse",
    "metric_mae",
    "evaluate",
    "time_run",
    "export_weight_grids",
]


@dataclass
class MetricsReport:
    mse: float
    mae: float
    per_variable_mse: list[float]
    per_variable_mae: list[float]
    n_samples: int
    seed: int
    space: str = "normalized"

    def to_dict(self) -> dict:
        return {
            "mse": self.mse,
            "mae": self.mae,
            "per_variable_mse": self.per_variable_mse,
            "per_variable_mae": self.per_variable_mae,
            "n_samples": self.n_samples,
            "seed": self.seed,
            "space": self.space,
        }


@dataclass
class TimingReport:
    train_seconds_per_epoch: float
    inference_seconds: float
    hardware_note: str

    def to_dict(self) -> dict:
        return {
            "train_seconds_per_epoch": self.train_seconds_per_epoch,
            "inference_seconds": self.inference_seconds,
            "hardware_note": self.hardware_note,
        }


def _eval_threads(threads: int | None) -> int:
    if threads is not None:
        return max(1, threads)
    return max(1, int(os.environ.get("AIT_THREADS", "1")))


def predictions_for_dataset(model, dataset: Dataset, batch_size: int = 64,
                            threads: int | None = None) -> list[list[np.ndarray]]:
    """Predicted values per sample per variable, aligned with each
    variable's queries.  Batches may be evaluated concurrently (capped
    by AIT_THREADS); results are reduced in dataset order regardless.
    """
    batches = make_batches(dataset, batch_size)
    workers = _eval_threads(threads)
    if workers > 1 and len(batches) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            outputs = list(pool.map(model.predict_batch, batches))
    else:
        outputs = [model.predict_batch(b) for b in batches]

    preds: list[list[np.ndarray] | None] = [None] * len(dataset)
    for batch, out in zip(batches, outputs):
        for row, sample_idx in enumerate(batch.sample_indices):
            per_var = []
            for v in range(out.shape[1]):
                qm = batch.query_mask[row, v]
                per_var.append(out[row, v][qm].copy())
            preds[sample_idx] = per_var
    return preds


def _nested_metric(preds, dataset: Dataset, err) -> tuple[float, list[float]]:
    """Nested means of err(pred, target); also per-variable breakdowns
    (each variable averaged over the samples in which it has queries)."""
    n_vars = dataset.n_vars
    sample_scores = []
    var_totals = np.zeros(n_vars)
    var_counts = np.zeros(n_vars, dtype=int)
    for sample, per_var in zip(dataset.samples, preds):
        var_scores = []
        for v, (_, queries) in enumerate(sample.variables):
            if len(queries) == 0:
                continue
            if queries.targets is None:
                raise ContractError("metrics: every query needs a target")
            score = float(err(per_var[v], queries.targets).mean())
            var_scores.append(score)
            var_totals[v] += score
            var_counts[v] += 1
        if var_scores:
            sample_scores.append(float(np.mean(var_scores)))
    if not sample_scores:
        raise ContractError("metrics undefined: no queries anywhere in the dataset")
    breakdown = [float(var_totals[v] / var_counts[v]) if var_counts[v] else float("nan")
                 for v in range(n_vars)]
    return float(np.mean(sample_scores)), breakdown


def metric_mse(preds, dataset: Dataset) -> float:
    return _nested_metric(preds, dataset, lambda p, t: (p - t) ** 2)[0]


def metric_mae(preds, dataset: Dataset) -> float:
    return _nested_metric(preds, dataset, lambda p, t: np.abs(p - t))[0]


def _denormalized_view(preds, dataset: Dataset, stats: NormStats):
    """Map normalized predictions and targets back to raw units."""
    from .data import invert_norm

    raw_samples = [invert_norm(s, stats) for s in dataset.samples]
    raw_preds = [
        [p * stats.std[v] + stats.mean[v] for v, p in enumerate(per_var)]
        for per_var in preds
    ]
    return raw_preds, Dataset(raw_samples, dataset.meta)


def evaluate(model, dataset: Dataset, batch_size: int = 64, seed: int = 0,
             stats: NormStats | None = None, raw_units: bool = False,
             threads: int | None = None) -> MetricsReport:
    """Deterministic metrics for the model on the dataset.

    ``stats`` must match the dataset's variable count when given; pass
    ``raw_units=True`` (requires stats) to report in raw units instead
    of normalized ones.
    """
    if stats is not None and len(stats.mean) != dataset.n_vars:
        raise ValidationError(
            f"normalization stats cover {len(stats.mean)} variables, "
            f"dataset has {dataset.n_vars}"
        )
    preds = predictions_for_dataset(model, dataset, batch_size, threads)
    space = "normalized"
    if raw_units:
        if stats is None:
            raise ContractError("evaluate: raw_units requires normalization stats")
        preds, dataset = _denormalized_view(preds, dataset, stats)
        space = "raw"
    mse, mse_breakdown = _nested_metric(preds, dataset, lambda p, t: (p - t) ** 2)
    mae, mae_breakdown = _nested_metric(preds, dataset, lambda p, t: np.abs(p - t))
    return MetricsReport(mse, mae, mse_breakdown, mae_breakdown,
                         len(dataset), seed, space)


def _run_train_epoch(model, train: Dataset, config: TrainConfig,
                     state, lr: float, epoch: int) -> None:
    from .numerics import Tape, backward
    from .training import adam_step

    for batch in make_batches(train, config.batch_size,
                              shuffle_seed=(config.seed, epoch)):
        if batch.query_mask.sum() == 0:
            continue
        with Tape():
            loss = model.loss(batch)
        grads = backward(loss, model.param_set)
        adam_step(model.param_set, grads, state, lr)


def time_run(model, train: Dataset, test: Dataset, config: TrainConfig,
             epochs: int = 3, hardware_note: str = "unspecified") -> TimingReport:
    """Wall-clock timing: mean optimization seconds per epoch over at
    least 3 measured epochs (after one unmeasured warm-up epoch) and the
    total inference time over the test split.  Parameter values are
    restored afterwards, so timing has no side effects on the model."""
    from .training import AdamState

    saved = model.param_set.snapshot()
    measured = max(3, epochs)
    try:
        state = AdamState(model.param_set, config)
        lr = config.lr0
        _run_train_epoch(model, train, config, state, lr, epoch=0)  # warm-up
        started = time.perf_counter()
        for epoch in range(1, measured + 1):
            _run_train_epoch(model, train, config, state, lr, epoch)
        train_seconds = (time.perf_counter() - started) / measured

        if len(test):
            batches = make_batches(test, config.batch_size)
            model.predict_batch(batches[0])  # warm-up pass, excluded
            started = time.perf_counter()
            for batch in batches:
                model.predict_batch(batch)
            inference_seconds = time.perf_counter() - started
        else:
            inference_seconds = 0.0
    finally:
        model.param_set.restore(saved)
    return TimingReport(train_seconds, inference_seconds, hardware_note)


def export_weight_grids(model, sample, out_dir, static_model=None) -> dict:
    """Write each realized weight matrix as a tab-separated grid with a
    one-line header, for external plotting.

    When a fixed-grid baseline is supplied alongside a fixed-grid model,
    the mean absolute entrywise difference of the two maps is reported.
    """
    os.makedirs(out_dir, exist_ok=True)
    written = {}
    matrices = dict(model.weight_matrices(sample))
    if static_model is not None:
        matrices.update(static_model.weight_matrices(sample))
    for name, grid in matrices.items():
        path = os.path.join(out_dir, f"weights_{name}.tsv")
        header = f"rows={grid.shape[0]} cols={grid.shape[1]} source={name}"
        np.savetxt(path, grid, fmt="%.17g", delimiter="\t", header=header)
        written[name] = path
    result = {"files": written}
    if static_model is not None:
        model_grids = model.weight_matrices(sample)
        static_grids = static_model.weight_matrices(sample)
        if len(model_grids) == 1 and len(static_grids) == 1:
            (wa,) = model_grids.values()
            (wb,) = static_grids.values()
            if wa.shape == wb.shape:
                result["mean_abs_diff"] = float(np.abs(wa - wb).mean())
    return result
