import numpy as np
import pytest

from ait.data import Dataset, NormStats, batch_from_samples, make_batches
from ait.errors import ContractError, ValidationError
from ait.evaluation import (
    evaluate,
    export_weight_grids,
    metric_mae,
    metric_mse,
    predictions_for_dataset,
    time_run,
)
from ait.model import (
    AiTConfig,
    AiTModel,
    ALinearRegularModel,
    MeanBaseline,
    PredictionOutput,
    StaticLinearModel,
    mse_loss,
)
from ait.numerics import Tensor
from ait.training import TrainConfig

from conftest import ragged_sample


def perfect_preds(dataset):
    return [[q.targets.copy() for _, q in s.variables] for s in dataset.samples]


@pytest.fixture
def small_dataset():
    samples = [
        ragged_sample(obs=[([0.2, 0.6], [1.0, 0.5]), ([0.3], [0.1])],
                      queries=[([1.1, 1.8], [0.2, 0.4]), ([1.5], [-0.1])]),
        ragged_sample(obs=[([0.1], [0.8]), ([0.4, 0.7], [0.2, 0.0])],
                      queries=[([1.4], [0.3]), ([1.2, 1.6], [0.5, 0.6])]),
    ]
    return Dataset(samples)


# ---------------------------------------------------------------------------
# metric formulas


def test_perfect_predictions_give_zero(small_dataset):
    preds = perfect_preds(small_dataset)
    assert metric_mse(preds, small_dataset) == 0.0
    assert metric_mae(preds, small_dataset) == 0.0


def test_single_variable_symmetric_errors():
    sample = ragged_sample(obs=[([0.5], [0.0]), ([], [])],
                           queries=[([1.2, 1.8], [1.0, -1.0]), ([], None)])
    ds = Dataset([sample])
    preds = [[np.array([0.0, 0.0]), np.array([])]]
    assert metric_mse(preds, ds) == pytest.approx(1.0)
    assert metric_mae(preds, ds) == pytest.approx(1.0)


def test_duplicating_a_sample_leaves_metrics_unchanged(small_dataset):
    rng = np.random.default_rng(0)
    preds = [[q.targets + rng.normal(size=len(q.targets)) for _, q in s.variables]
             for s in small_dataset.samples]
    mse1 = metric_mse(preds, small_dataset)
    mae1 = metric_mae(preds, small_dataset)
    doubled = Dataset(small_dataset.samples + small_dataset.samples)
    preds2 = preds + preds
    assert metric_mse(preds2, doubled) == pytest.approx(mse1, rel=1e-12)
    assert metric_mae(preds2, doubled) == pytest.approx(mae1, rel=1e-12)


def test_metric_mse_equals_mse_loss(small_dataset):
    """The metric and the training loss share one formula."""
    model = AiTModel(AiTConfig(n_vars=2, hidden=8, n_heads=2, n_blocks=1), seed=0)
    preds = predictions_for_dataset(model, small_dataset, batch_size=2)
    metric = metric_mse(preds, small_dataset)

    batch = batch_from_samples(small_dataset.samples)
    out = model.predict_batch(batch)
    loss = float(mse_loss(PredictionOutput(Tensor(out), batch.query_mask), batch))
    assert abs(metric - loss) < 1e-12


def test_metrics_invariant_to_batch_size_and_order(small_dataset):
    model = AiTModel(AiTConfig(n_vars=2, hidden=8, n_heads=2, n_blocks=1), seed=0)
    r1 = evaluate(model, small_dataset, batch_size=1)
    r2 = evaluate(model, small_dataset, batch_size=64)
    assert r1.mse == pytest.approx(r2.mse, rel=1e-12)
    assert r1.mae == pytest.approx(r2.mae, rel=1e-12)
    reordered = Dataset(list(reversed(small_dataset.samples)))
    r3 = evaluate(model, reordered, batch_size=1)
    assert r3.mse == pytest.approx(r1.mse, rel=1e-12)


def test_metrics_error_without_targets():
    sample = ragged_sample(obs=[([0.5], [1.0]), ([], [])],
                           queries=[([], None), ([], None)])
    ds = Dataset([sample])
    with pytest.raises(ContractError):
        metric_mse([[np.array([]), np.array([])]], ds)


def test_norm_stats_mismatch_is_validation_error(small_dataset):
    model = MeanBaseline()
    bad = NormStats(np.zeros(5), np.ones(5), 0.0, 1.0)
    with pytest.raises(ValidationError):
        evaluate(model, small_dataset, stats=bad)


def test_raw_units_reporting(small_dataset):
    stats = NormStats(np.array([1.0, -2.0]), np.array([2.0, 0.5]), 0.0, 2.0)
    model = MeanBaseline()
    norm = evaluate(model, small_dataset, stats=stats)
    raw = evaluate(model, small_dataset, stats=stats, raw_units=True)
    assert raw.space == "raw" and norm.space == "normalized"
    # variable 0 has std 2: squared errors scale by 4, absolute by 2
    assert raw.per_variable_mse[0] == pytest.approx(4 * norm.per_variable_mse[0])
    assert raw.per_variable_mae[0] == pytest.approx(2 * norm.per_variable_mae[0])


def test_threaded_evaluation_matches_serial(small_normalized_splits):
    train, _, _, _ = small_normalized_splits
    model = AiTModel(AiTConfig(n_vars=3, hidden=8, n_heads=2, n_blocks=1), seed=0)
    serial = predictions_for_dataset(model, train, batch_size=4, threads=1)
    threaded = predictions_for_dataset(model, train, batch_size=4, threads=4)
    for a, b in zip(serial, threaded):
        for pa, pb in zip(a, b):
            np.testing.assert_array_equal(pa, pb)


def test_evaluate_matches_fit_best_val_loss(small_normalized_splits):
    from ait.training import fit, evaluate_loss

    train, val, _, _ = small_normalized_splits
    model = AiTModel(AiTConfig(n_vars=3, hidden=8, n_heads=2, n_blocks=1), seed=5)
    cfg = TrainConfig(lr0=3e-3, batch_size=8, max_epochs=4, patience=4, seed=5)
    _, report = fit(model, train, val, cfg, log=lambda m: None)
    metrics = evaluate(model, val, batch_size=8)
    assert abs(metrics.mse - report.best_val_loss) < 1e-10


# ---------------------------------------------------------------------------
# timing


def test_timing_empty_test_split(small_normalized_splits):
    train, _, _, _ = small_normalized_splits
    model = AiTModel(AiTConfig(n_vars=3, hidden=8, n_heads=2, n_blocks=1), seed=0)
    cfg = TrainConfig(lr0=1e-3, batch_size=16, max_epochs=1, patience=1, seed=0)
    report = time_run(model, train, Dataset([]), cfg, hardware_note="test-rig")
    assert report.inference_seconds == 0.0
    assert report.train_seconds_per_epoch > 0.0
    assert report.hardware_note == "test-rig"


def test_timing_preserves_parameters(small_normalized_splits):
    train, _, _, _ = small_normalized_splits
    model = AiTModel(AiTConfig(n_vars=3, hidden=8, n_heads=2, n_blocks=1), seed=0)
    before = model.param_set.snapshot()
    cfg = TrainConfig(lr0=1e-3, batch_size=16, max_epochs=1, patience=1, seed=0)
    time_run(model, train, train, cfg)
    after = model.param_set.snapshot()
    for name in before:
        np.testing.assert_array_equal(before[name], after[name])


def test_inference_time_scales_roughly_linearly():
    from ait.data import GeneratorConfig, generate_synthetic

    cfg = GeneratorConfig(n_vars=6, n_samples=300, rate=1.0, missingness=0.3,
                          queries_per_variable=8)
    ds = generate_synthetic(cfg, seed=3)
    doubled = Dataset(ds.samples + ds.samples)
    model = AiTModel(AiTConfig(n_vars=6, hidden=32, n_heads=2, n_blocks=2), seed=0)
    tc = TrainConfig(lr0=1e-3, batch_size=32, max_epochs=1, patience=1, seed=0)
    # best of three to shrug off scheduler jitter
    small = min(time_run(model, Dataset(ds.samples[:8]), ds, tc).inference_seconds
                for _ in range(3))
    big = min(time_run(model, Dataset(ds.samples[:8]), doubled, tc).inference_seconds
              for _ in range(3))
    ratio = big / small
    assert 1.0 <= ratio <= 3.0  # doubling the split: 2x within a +-50% band


# ---------------------------------------------------------------------------
# weight-grid export


def load_grid(path):
    header = open(path).readline()
    assert header.startswith("# rows=") and "source=" in header
    parts = dict(p.split("=") for p in header[2:].split())
    return np.loadtxt(path, skiprows=1).reshape(int(parts["rows"]), int(parts["cols"]))


def test_export_rows_sum_to_one(tmp_path, small_dataset):
    model = AiTModel(AiTConfig(n_vars=2, hidden=8, n_heads=2, n_blocks=1), seed=1)
    out = export_weight_grids(model, small_dataset.samples[0], tmp_path / "w")
    assert out["files"]
    for path in out["files"].values():
        grid = load_grid(path)
        np.testing.assert_allclose(grid.sum(axis=1), 1.0, atol=1e-12)


def test_export_is_deterministic(tmp_path, small_dataset):
    model = AiTModel(AiTConfig(n_vars=2, hidden=8, n_heads=2, n_blocks=1), seed=1)
    a = export_weight_grids(model, small_dataset.samples[0], tmp_path / "a")
    b = export_weight_grids(model, small_dataset.samples[0], tmp_path / "b")
    for name in a["files"]:
        assert open(a["files"][name]).read() == open(b["files"][name]).read()


def test_export_reports_static_comparison(tmp_path):
    sample = ragged_sample(
        obs=[(np.linspace(0.1, 0.9, 5).tolist(), [0.0] * 5)] * 2,
        queries=[([1.2, 1.5, 1.8], [0.0] * 3)] * 2,
    )
    adaptive = ALinearRegularModel(l_in=5, l_out=3, d=4, seed=0)
    static = StaticLinearModel(l_in=5, l_out=3, seed=0)
    out = export_weight_grids(adaptive, sample, tmp_path / "w", static_model=static)
    assert "mean_abs_diff" in out and out["mean_abs_diff"] >= 0.0
    assert set(out["files"]) == {"alinear_regular", "static_linear"}
