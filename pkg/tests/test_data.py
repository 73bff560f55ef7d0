import hashlib

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ait.data import (
    Dataset,
    GeneratorConfig,
    batch_from_samples,
    fit_norm,
    apply_norm,
    invert_norm,
    generate_synthetic,
    load_dataset,
    make_batches,
    normalize_dataset,
    save_dataset,
    split,
    unpad_batch,
)
from ait.errors import ConfigError, ParseError, ValidationError

from conftest import ragged_sample


def dataset_fingerprint(ds: Dataset) -> str:
    h = hashlib.sha256()
    for s in ds.samples:
        for series, queries in s.variables:
            h.update(series.times.tobytes())
            h.update(series.values.tobytes())
            h.update(queries.times.tobytes())
            if queries.targets is not None:
                h.update(queries.targets.tobytes())
    return h.hexdigest()


# ---------------------------------------------------------------------------
# generation


def test_generation_is_deterministic():
    cfg = GeneratorConfig(n_vars=3, n_samples=10, rate=0.5, missingness=0.3,
                          noise_std=0.1)
    a = generate_synthetic(cfg, seed=5)
    b = generate_synthetic(cfg, seed=5)
    assert dataset_fingerprint(a) == dataset_fingerprint(b)
    c = generate_synthetic(cfg, seed=6)
    assert dataset_fingerprint(a) != dataset_fingerprint(c)


def test_no_thinning_gives_equal_lengths():
    cfg = GeneratorConfig(n_vars=4, n_samples=5, rate=2.0, missingness=0.0)
    ds = generate_synthetic(cfg, seed=1)
    lengths = {len(s.variables[v][0]) for s in ds.samples for v in range(4)}
    assert lengths == {48}  # rate * span, identical for every variable


def test_single_latent_zero_noise_variables_are_affine_related():
    cfg = GeneratorConfig(n_vars=3, n_samples=4, n_latents=1, rate=1.0,
                          missingness=0.0, noise_std=0.0, regular=True)
    ds = generate_synthetic(cfg, seed=9)
    for sample in ds.samples:
        x1 = sample.variables[0][0].values
        x2 = sample.variables[1][0].values
        a = np.vstack([x1[:3], np.ones(3)]).T
        coef, *_ = np.linalg.lstsq(a, x2[:3], rcond=None)
        predicted = coef[0] * x1 + coef[1]
        np.testing.assert_allclose(predicted, x2, atol=1e-9)


def test_observation_times_strictly_increasing_and_in_span():
    cfg = GeneratorConfig(n_vars=3, n_samples=20, rate=1.5, missingness=0.4)
    ds = generate_synthetic(cfg, seed=3)
    for s in ds.samples:
        for series, queries in s.variables:
            if len(series) > 1:
                assert np.all(np.diff(series.times) > 0)
            if len(series):
                assert series.times[0] >= s.obs_span[0]
                assert series.times[-1] <= s.obs_span[1]
            assert np.all(queries.times >= s.obs_span[1])
            assert np.all(queries.times <= s.fc_span[1])


def test_drop_variable_prob_produces_empty_series():
    cfg = GeneratorConfig(n_vars=4, n_samples=30, rate=1.0,
                          drop_variable_prob=0.5)
    ds = generate_synthetic(cfg, seed=4)
    empties = sum(len(s.variables[v][0]) == 0 for s in ds.samples for v in range(4))
    assert 0.3 < empties / (30 * 4) < 0.7
    # queries survive the drop
    for s in ds.samples:
        for _, queries in s.variables:
            assert len(queries) == cfg.queries_per_variable


@pytest.mark.parametrize("bad", [
    dict(rate=0.0),
    dict(rate=-1.0),
    dict(obs_span=(5.0, 5.0)),
    dict(fc_span=(30.0, 20.0)),
    dict(missingness=1.0),
    dict(noise_std=-0.1),
    dict(n_vars=1),
    dict(fc_span=(10.0, 20.0)),  # starts before the observation window ends
])
def test_generator_config_errors(bad):
    cfg = GeneratorConfig(**bad)
    with pytest.raises(ConfigError):
        generate_synthetic(cfg, seed=0)


# ---------------------------------------------------------------------------
# file format


def test_round_trip_is_bit_exact(tmp_path):
    cfg = GeneratorConfig(n_vars=3, n_samples=10, rate=0.7, missingness=0.2,
                          noise_std=0.3)
    ds = generate_synthetic(cfg, seed=12)
    path = tmp_path / "ds.jsonl"
    save_dataset(ds, path)
    loaded = load_dataset(path)
    assert dataset_fingerprint(ds) == dataset_fingerprint(loaded)
    assert loaded.meta == ds.meta
    # a second save produces identical bytes
    path2 = tmp_path / "ds2.jsonl"
    save_dataset(loaded, path2)
    assert path.read_bytes() == path2.read_bytes()


def test_empty_file_loads_as_empty_dataset(tmp_path):
    path = tmp_path / "empty.jsonl"
    path.write_text("")
    ds = load_dataset(path)
    assert len(ds) == 0


def test_non_increasing_times_rejected(tmp_path):
    path = tmp_path / "bad.jsonl"
    path.write_text(
        '{"vars": [{"t": [2.0, 1.0], "x": [0.0, 0.0], "qt": [], "qx": []}],'
        ' "obs_span": [0.0, 3.0], "fc_span": [3.0, 4.0]}\n')
    with pytest.raises(ValidationError, match="times not strictly increasing"):
        load_dataset(path)


def test_parse_error_reports_line_number(tmp_path):
    path = tmp_path / "broken.jsonl"
    path.write_text('{"vars": [], "obs_span": [0, 1], "fc_span": [1, 2]}\nnot json\n')
    with pytest.raises(ParseError, match="line 2"):
        load_dataset(path)


def test_validation_error_names_sample_and_variable(tmp_path):
    good = '{"vars": [{"t": [0.5], "x": [1.0], "qt": [1.5], "qx": [0.0]}], "obs_span": [0.0, 1.0], "fc_span": [1.0, 2.0]}'
    bad = '{"vars": [{"t": [0.9, 0.2], "x": [1.0, 2.0], "qt": [], "qx": []}], "obs_span": [0.0, 1.0], "fc_span": [1.0, 2.0]}'
    path = tmp_path / "mix.jsonl"
    path.write_text(good + "\n" + bad + "\n")
    with pytest.raises(ValidationError, match="sample 1 variable 0"):
        load_dataset(path)


# ---------------------------------------------------------------------------
# splitting


def test_split_sizes_six_two_two():
    ds = generate_synthetic(GeneratorConfig(n_vars=2, n_samples=10, rate=0.5), seed=0)
    train, val, test = split(ds, seed=1)
    assert (len(train), len(val), len(test)) == (6, 2, 2)


def test_split_all_train():
    ds = generate_synthetic(GeneratorConfig(n_vars=2, n_samples=7, rate=0.5), seed=0)
    train, val, test = split(ds, ratios=(1.0, 0.0, 0.0), seed=1)
    assert (len(train), len(val), len(test)) == (7, 0, 0)


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 40), st.integers(0, 2 ** 31 - 1))
def test_split_is_a_partition(n, seed):
    samples = [object() for _ in range(n)]
    ds = Dataset(samples)  # split only permutes, content is irrelevant
    train, val, test = split(ds, seed=seed)
    combined = train.samples + val.samples + test.samples
    assert len(combined) == n
    assert {id(s) for s in combined} == {id(s) for s in samples}


def test_split_rejects_bad_ratios():
    ds = Dataset([object()])
    with pytest.raises(ConfigError):
        split(ds, ratios=(0.5, 0.2, 0.2))


# ---------------------------------------------------------------------------
# normalization


def test_constant_variable_normalizes_to_zero():
    s = ragged_sample(obs=[([0.1, 0.2, 0.3], [5.0, 5.0, 5.0]), ([0.1], [1.0])],
                      queries=[([1.5], [5.0]), ([1.5], [1.0])])
    ds = Dataset([s])
    stats = fit_norm(ds)
    out = apply_norm(s, stats)
    np.testing.assert_array_equal(out.variables[0][0].values, np.zeros(3))


def test_norm_round_trip():
    cfg = GeneratorConfig(n_vars=3, n_samples=8, rate=0.6, noise_std=0.4)
    ds = generate_synthetic(cfg, seed=21)
    stats = fit_norm(ds)
    for sample in ds.samples:
        back = invert_norm(apply_norm(sample, stats), stats)
        for v in range(3):
            np.testing.assert_allclose(back.variables[v][0].values,
                                       sample.variables[v][0].values, atol=1e-12)
            np.testing.assert_allclose(back.variables[v][1].targets,
                                       sample.variables[v][1].targets, atol=1e-12)
            np.testing.assert_allclose(back.variables[v][0].times,
                                       sample.variables[v][0].times, atol=1e-12)


def test_time_map_midpoint_and_end():
    cfg = GeneratorConfig(n_vars=2, n_samples=4, rate=0.5,
                          obs_span=(0.0, 24.0), fc_span=(24.0, 48.0))
    ds = generate_synthetic(cfg, seed=2)
    stats = fit_norm(ds)
    assert stats.map_time(np.array([24.0]))[0] == pytest.approx(0.5)
    assert stats.map_time(np.array([48.0]))[0] == pytest.approx(1.0)
    assert stats.map_time(np.array([0.0]))[0] == pytest.approx(0.0)


def test_unobserved_variable_gets_passthrough_stats():
    s = ragged_sample(obs=[([0.5], [3.0]), ([], [])],
                      queries=[([1.5], [0.0]), ([1.5], [0.0])])
    stats = fit_norm(Dataset([s]))
    assert stats.mean[1] == 0.0 and stats.std[1] == 1.0


# ---------------------------------------------------------------------------
# batching


def test_batch_sizes_with_short_tail():
    ds = generate_synthetic(GeneratorConfig(n_vars=2, n_samples=5, rate=0.5), seed=0)
    batches = make_batches(ds, batch_size=2)
    assert [b.n_samples for b in batches] == [2, 2, 1]


def test_empty_series_has_all_false_mask_row(toy_batch):
    assert not toy_batch.obs_mask[0, 1].any()
    assert toy_batch.values[0, 1].sum() == 0.0


def test_mask_accounting(toy_batch):
    expected = 3 + 0 + 5 + 2 + 4 + 1
    assert int(toy_batch.obs_mask.sum()) == expected
    assert int(toy_batch.query_mask.sum()) == 2 + 3 + 0 + 1 + 2 + 2


def test_unpad_reproduces_content(toy_batch):
    recovered = unpad_batch(toy_batch)
    first_var = recovered[0][0]
    np.testing.assert_array_equal(first_var[0].times, [0.1, 0.3, 0.5])
    np.testing.assert_array_equal(first_var[0].values, [1.0, -0.5, 0.2])
    np.testing.assert_array_equal(recovered[1][2][1].times, [1.5, 1.5])
    assert len(recovered[0][1][0]) == 0


def test_unpad_round_trip_on_generated_data():
    cfg = GeneratorConfig(n_vars=3, n_samples=6, rate=0.8, missingness=0.5)
    ds = generate_synthetic(cfg, seed=14)
    batch = batch_from_samples(ds.samples)
    recovered = unpad_batch(batch)
    for sample, rec in zip(ds.samples, recovered):
        for (series, queries), (r_series, r_queries) in zip(sample.variables, rec):
            np.testing.assert_array_equal(series.times, r_series.times)
            np.testing.assert_array_equal(series.values, r_series.values)
            np.testing.assert_array_equal(queries.times, r_queries.times)
            np.testing.assert_array_equal(queries.targets, r_queries.targets)


def test_shuffle_determinism():
    ds = generate_synthetic(GeneratorConfig(n_vars=2, n_samples=12, rate=0.5), seed=0)
    a = make_batches(ds, 4, shuffle_seed=(3, 1))
    b = make_batches(ds, 4, shuffle_seed=(3, 1))
    c = make_batches(ds, 4, shuffle_seed=(3, 2))
    assert [x.sample_indices for x in a] == [x.sample_indices for x in b]
    assert [x.sample_indices for x in a] != [x.sample_indices for x in c]


def test_padding_is_clamped_for_fully_empty_axes():
    s = ragged_sample(obs=[([], []), ([], [])], queries=[([], None), ([], None)])
    batch = batch_from_samples([s])
    assert batch.values.shape == (1, 2, 1)
    assert not batch.obs_mask.any() and not batch.query_mask.any()
