import numpy as np
import pytest

from ait.data import (
    GeneratorConfig,
    QuerySet,
    Sample,
    VariableSeries,
    batch_from_samples,
    fit_norm,
    generate_synthetic,
    normalize_dataset,
)


def ragged_sample(obs, queries, obs_span=(0.0, 1.0), fc_span=(1.0, 2.0)):
    """Build a sample from plain lists: obs/queries are per-variable
    (times, values) pairs."""
    variables = []
    for (ot, ov), (qt, qv) in zip(obs, queries):
        variables.append(
            (
                VariableSeries(np.asarray(ot, float), np.asarray(ov, float)),
                QuerySet(np.asarray(qt, float),
                         None if qv is None else np.asarray(qv, float)),
            )
        )
    return Sample(variables, obs_span, fc_span)


@pytest.fixture
def toy_batch():
    """Two ragged samples, three variables, including an empty series and
    an empty query set."""
    s0 = ragged_sample(
        obs=[([0.1, 0.3, 0.5], [1.0, -0.5, 0.2]), ([], []), ([0.2, 0.4, 0.6, 0.8, 0.9], [0.3, 0.1, -0.2, 0.5, 0.4])],
        queries=[([1.2, 1.5], [0.4, 0.1]), ([1.1, 1.4, 1.9], [0.2, 0.0, -0.3]), ([], None)],
    )
    s1 = ragged_sample(
        obs=[([0.15, 0.75], [0.9, -0.1]), ([0.1, 0.2, 0.5, 0.7], [0.0, 0.2, 0.1, -0.4]), ([0.5], [2.0])],
        queries=[([1.3], [0.5]), ([1.2, 1.6], [0.1, 0.2]), ([1.5, 1.5], [0.7, 0.7])],
    )
    return batch_from_samples([s0, s1])


@pytest.fixture(scope="session")
def small_normalized_splits():
    """A small correlated dataset, split and normalized, for training and
    evaluation tests."""
    from ait.data import split

    cfg = GeneratorConfig(n_vars=3, n_samples=60, n_latents=2, rate=0.4,
                          missingness=0.4, noise_std=0.05,
                          queries_per_variable=4)
    ds = generate_synthetic(cfg, seed=2024)
    train, val, test = split(ds, seed=2024)
    stats = fit_norm(train)
    return (normalize_dataset(train, stats), normalize_dataset(val, stats),
            normalize_dataset(test, stats), stats)
