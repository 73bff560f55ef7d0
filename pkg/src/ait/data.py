"""Irregular multivariate series: data model, synthetic generation, the
line-delimited file format, normalization, splitting, and padded batching.

A dataset is a list of samples; each sample holds, per variable, a ragged
observation series (strictly increasing times) plus a set of forecast
queries with optional ground-truth targets.  Everything downstream
consumes padded batches whose boolean masks, not sentinel values, mark
the real entries.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, ParseError, ValidationError

__all__ = [
    "VariableSeries",
    "QuerySet",
    "Sample",
    "Dataset",
    "GeneratorConfig",
    "NormStats",
    "Batch",
    "generate_synthetic",
    "save_dataset",
    "load_dataset",
    "split",
    "fit_norm",
    "apply_norm",
    "invert_norm",
    "normalize_dataset",
    "make_batches",
    "unpad_batch",
]


@dataclass
class VariableSeries:
    """One variable's ragged observation record."""

    times: np.ndarray
    values: np.ndarray

    def __len__(self) -> int:
        return len(self.times)


@dataclass
class QuerySet:
    """Forecast request times for one variable, with targets when known."""

    times: np.ndarray
    targets: np.ndarray | None = None

    def __len__(self) -> int:
        return len(self.times)


@dataclass
class Sample:
    """All variables of one series instance plus its time windows."""

    variables: list[tuple[VariableSeries, QuerySet]]
    obs_span: tuple[float, float]
    fc_span: tuple[float, float]

    @property
    def n_vars(self) -> int:
        return len(self.variables)


@dataclass
class Dataset:
    samples: list[Sample]
    meta: dict | None = None

    def __len__(self) -> int:
        return len(self.samples)

    @property
    def n_vars(self) -> int:
        return self.samples[0].n_vars if self.samples else 0


@dataclass
class GeneratorConfig:
    """Knobs for the latent-factor synthetic generator.

    Variables are random linear mixes (fixed per dataset) of shared
    latent signals (random-frequency, random-phase sinusoid plus linear
    trend, drawn per sample), so cross-variable correlation is built in.
    Observation times are a jittered per-variable grid at ``rate`` points
    per time unit, thinned by ``missingness``; queries are random times
    in the forecast span with noiseless targets.
    """

    n_vars: int = 6
    n_samples: int = 100
    n_latents: int = 2
    rate: float = 1.0
    missingness: float = 0.0
    noise_std: float = 0.0
    obs_span: tuple[float, float] = (0.0, 24.0)
    fc_span: tuple[float, float] = (24.0, 48.0)
    queries_per_variable: int = 8
    regular: bool = False
    drop_variable_prob: float = 0.0

    def validate(self) -> None:
        if self.n_vars < 2:
            raise ConfigError("generator: n_vars must be >= 2")
        if self.n_samples < 1:
            raise ConfigError("generator: n_samples must be >= 1")
        if self.n_latents < 1:
            raise ConfigError("generator: n_latents must be >= 1")
        if self.rate <= 0:
            raise ConfigError("generator: rate must be > 0")
        if not 0.0 <= self.missingness < 1.0:
            raise ConfigError("generator: missingness must be in [0, 1)")
        if self.noise_std < 0:
            raise ConfigError("generator: noise_std must be >= 0")
        for name, span in (("obs_span", self.obs_span), ("fc_span", self.fc_span)):
            if span[1] <= span[0]:
                raise ConfigError(f"generator: {name} has zero or negative length")
        if self.fc_span[0] < self.obs_span[1]:
            raise ConfigError("generator: forecast span must start at or after the observation window")
        if self.queries_per_variable < 1:
            raise ConfigError("generator: queries_per_variable must be >= 1")
        if not 0.0 <= self.drop_variable_prob < 1.0:
            raise ConfigError("generator: drop_variable_prob must be in [0, 1)")

    def to_dict(self) -> dict:
        return {
            "n_vars": self.n_vars,
            "n_samples": self.n_samples,
            "n_latents": self.n_latents,
            "rate": self.rate,
            "missingness": self.missingness,
            "noise_std": self.noise_std,
            "obs_span": list(self.obs_span),
            "fc_span": list(self.fc_span),
            "queries_per_variable": self.queries_per_variable,
            "regular": self.regular,
            "drop_variable_prob": self.drop_variable_prob,
        }


# Latent-signal shape constants: frequencies in cycles per observation
# span, trend drawn so its total drift over the full window is O(1).
_FREQ_RANGE = (0.5, 1.5)
_TREND_SCALE = 0.8
_OFFSET_SCALE = 0.5


def generate_synthetic(config: GeneratorConfig, seed: int) -> Dataset:
    """Generate a dataset as a pure function of (config, seed)."""
    config.validate()
    rng = np.random.default_rng(seed)

    n, f = config.n_vars, config.n_latents
    obs_start, obs_end = config.obs_span
    fc_start, fc_end = config.fc_span
    obs_len = obs_end - obs_start
    total_len = fc_end - obs_start

    # dataset-level identity of each variable: mixing weights and offset
    mixing = rng.normal(size=(n, f)) / np.sqrt(f)
    offsets = rng.normal(scale=_OFFSET_SCALE, size=n)

    grid_count = max(1, int(round(config.rate * obs_len)))
    spacing = obs_len / grid_count

    samples = []
    for _ in range(config.n_samples):
        freqs = rng.uniform(*_FREQ_RANGE, size=f) / obs_len
        phases = rng.uniform(0.0, 2.0 * np.pi, size=f)
        slopes = rng.normal(scale=_TREND_SCALE / total_len, size=f)

        def latent_mix(t: np.ndarray) -> np.ndarray:
            # [len(t), F] latent values, then mix to [len(t), N]
            tt = t[:, None]
            lat = np.sin(2.0 * np.pi * freqs * tt + phases) + slopes * tt
            return lat @ mixing.T + offsets

        variables = []
        for v in range(n):
            if config.regular:
                times = obs_start + np.arange(grid_count) * spacing
            else:
                jitter = rng.uniform(0.0, 1.0, size=grid_count)
                times = obs_start + (np.arange(grid_count) + jitter) * spacing
            keep = rng.uniform(size=grid_count) >= config.missingness
            if config.drop_variable_prob > 0 and rng.uniform() < config.drop_variable_prob:
                keep[:] = False
            times = times[keep]
            values = latent_mix(times)[:, v]
            if config.noise_std > 0:
                values = values + rng.normal(scale=config.noise_std, size=len(times))

            if config.regular:
                q_spacing = (fc_end - fc_start) / config.queries_per_variable
                q_times = fc_start + (np.arange(config.queries_per_variable) + 0.5) * q_spacing
            else:
                q_times = np.sort(rng.uniform(fc_start, fc_end, size=config.queries_per_variable))
            q_targets = latent_mix(q_times)[:, v]

            variables.append(
                (VariableSeries(times, values), QuerySet(q_times, q_targets))
            )
        samples.append(Sample(variables, config.obs_span, config.fc_span))

    meta = {"n_vars": n, "config": config.to_dict(), "seed": int(seed)}
    return Dataset(samples, meta)


# ---------------------------------------------------------------------------
# Canonical file format: one JSON object per line, optional "#meta " header


def _floats(arr: np.ndarray) -> list[float]:
    return [float(v) for v in arr]


def save_dataset(dataset: Dataset, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        if dataset.meta is not None:
            fh.write("#meta " + json.dumps(dataset.meta, sort_keys=True) + "\n")
        for sample in dataset.samples:
            variables = []
            for series, queries in sample.variables:
                entry = {"t": _floats(series.times), "x": _floats(series.values),
                         "qt": _floats(queries.times)}
                if queries.targets is not None:
                    entry["qx"] = _floats(queries.targets)
                variables.append(entry)
            record = {
                "vars": variables,
                "obs_span": [float(sample.obs_span[0]), float(sample.obs_span[1])],
                "fc_span": [float(sample.fc_span[0]), float(sample.fc_span[1])],
            }
            fh.write(json.dumps(record, sort_keys=True) + "\n")


def validate_sample(sample: Sample, index: int) -> None:
    """Check the structural invariants of one sample; raise naming the
    offending sample and variable."""
    for v, (series, queries) in enumerate(sample.variables):
        where = f"sample {index} variable {v}"
        if len(series.times) != len(series.values):
            raise ValidationError(f"{where}: times and values lengths differ")
        if len(series.times) > 1 and not np.all(np.diff(series.times) > 0):
            raise ValidationError(f"{where}: times not strictly increasing")
        if len(series.times):
            if series.times[0] < sample.obs_span[0] or series.times[-1] > sample.obs_span[1]:
                raise ValidationError(f"{where}: observation time outside span")
        if queries.targets is not None and len(queries.targets) != len(queries.times):
            raise ValidationError(f"{where}: query targets length mismatch")
        if len(queries.times):
            if queries.times.min() < sample.obs_span[1]:
                raise ValidationError(f"{where}: query time before end of observation window")
            if queries.times.min() < sample.fc_span[0] or queries.times.max() > sample.fc_span[1]:
                raise ValidationError(f"{where}: query time outside forecast span")


def load_dataset(path) -> Dataset:
    meta = None
    samples: list[Sample] = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            if line.startswith("#meta "):
                if lineno != 1:
                    raise ParseError(f"line {lineno}: #meta header allowed only on line 1")
                try:
                    meta = json.loads(line[len("#meta "):])
                except json.JSONDecodeError as exc:
                    raise ParseError(f"line {lineno}: bad meta header: {exc}") from exc
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ParseError(f"line {lineno}: {exc}") from exc
            try:
                variables = []
                for entry in record["vars"]:
                    series = VariableSeries(
                        np.asarray(entry["t"], dtype=np.float64),
                        np.asarray(entry["x"], dtype=np.float64),
                    )
                    targets = entry.get("qx")
                    queries = QuerySet(
                        np.asarray(entry["qt"], dtype=np.float64),
                        None if targets is None else np.asarray(targets, dtype=np.float64),
                    )
                    variables.append((series, queries))
                sample = Sample(
                    variables,
                    (float(record["obs_span"][0]), float(record["obs_span"][1])),
                    (float(record["fc_span"][0]), float(record["fc_span"][1])),
                )
            except (KeyError, TypeError, IndexError) as exc:
                raise ParseError(f"line {lineno}: malformed sample record ({exc})") from exc
            index = len(samples)
            validate_sample(sample, index)
            if samples and sample.n_vars != samples[0].n_vars:
                raise ValidationError(
                    f"sample {index}: has {sample.n_vars} variables, expected {samples[0].n_vars}"
                )
            samples.append(sample)
    return Dataset(samples, meta)


# ---------------------------------------------------------------------------
# Splitting and normalization


def split(dataset: Dataset, ratios=(0.6, 0.2, 0.2), seed: int = 0):
    """Disjoint random partition into (train, val, test), deterministic
    for a given seed, with sizes within rounding of the ratios."""
    if abs(sum(ratios) - 1.0) > 1e-9:
        raise ConfigError(f"split: ratios {ratios} do not sum to 1")
    n = len(dataset)
    order = np.random.default_rng(seed).permutation(n)
    c1 = int(round(ratios[0] * n))
    c2 = int(round((ratios[0] + ratios[1]) * n))
    parts = (order[:c1], order[c1:c2], order[c2:])
    return tuple(
        Dataset([dataset.samples[i] for i in idx], dataset.meta) for idx in parts
    )


@dataclass
class NormStats:
    """Per-variable z-score statistics plus the global affine time map
    sending [observation start, forecast end] onto [0, 1]."""

    mean: np.ndarray
    std: np.ndarray
    t0: float
    t1: float

    def map_time(self, t: np.ndarray) -> np.ndarray:
        return (np.asarray(t, dtype=np.float64) - self.t0) / (self.t1 - self.t0)

    def unmap_time(self, t: np.ndarray) -> np.ndarray:
        return np.asarray(t, dtype=np.float64) * (self.t1 - self.t0) + self.t0

    def to_dict(self) -> dict:
        return {"mean": _floats(self.mean), "std": _floats(self.std),
                "t0": float(self.t0), "t1": float(self.t1)}

    @classmethod
    def from_dict(cls, d: dict) -> "NormStats":
        return cls(np.asarray(d["mean"], dtype=np.float64),
                   np.asarray(d["std"], dtype=np.float64),
                   float(d["t0"]), float(d["t1"]))


_STD_FLOOR = 1e-8


def fit_norm(train: Dataset) -> NormStats:
    """Fit normalization statistics on the training split only."""
    if not train.samples:
        raise ConfigError("fit_norm: empty training split")
    n = train.n_vars
    mean = np.zeros(n)
    std = np.ones(n)
    for v in range(n):
        chunks = [s.variables[v][0].values for s in train.samples
                  if len(s.variables[v][0].values)]
        if not chunks:
            continue  # zero training observations: keep (0, 1) pass-through
        values = np.concatenate(chunks)
        mean[v] = values.mean()
        std[v] = max(values.std(), _STD_FLOOR)
    t0 = min(s.obs_span[0] for s in train.samples)
    t1 = max(s.fc_span[1] for s in train.samples)
    if t1 <= t0:
        raise ConfigError("fit_norm: degenerate time window")
    return NormStats(mean, std, t0, t1)


def apply_norm(sample: Sample, stats: NormStats) -> Sample:
    """Z-score values per variable and map all times into [0, 1]."""
    variables = []
    for v, (series, queries) in enumerate(sample.variables):
        mu, sd = stats.mean[v], stats.std[v]
        new_series = VariableSeries(stats.map_time(series.times), (series.values - mu) / sd)
        new_queries = QuerySet(
            stats.map_time(queries.times),
            None if queries.targets is None else (queries.targets - mu) / sd,
        )
        variables.append((new_series, new_queries))
    return Sample(
        variables,
        tuple(stats.map_time(np.asarray(sample.obs_span)).tolist()),
        tuple(stats.map_time(np.asarray(sample.fc_span)).tolist()),
    )


def invert_norm(sample: Sample, stats: NormStats) -> Sample:
    """Inverse of apply_norm, for reporting in raw units."""
    variables = []
    for v, (series, queries) in enumerate(sample.variables):
        mu, sd = stats.mean[v], stats.std[v]
        new_series = VariableSeries(stats.unmap_time(series.times), series.values * sd + mu)
        new_queries = QuerySet(
            stats.unmap_time(queries.times),
            None if queries.targets is None else queries.targets * sd + mu,
        )
        variables.append((new_series, new_queries))
    return Sample(
        variables,
        tuple(stats.unmap_time(np.asarray(sample.obs_span)).tolist()),
        tuple(stats.unmap_time(np.asarray(sample.fc_span)).tolist()),
    )


def normalize_dataset(dataset: Dataset, stats: NormStats) -> Dataset:
    return Dataset([apply_norm(s, stats) for s in dataset.samples], dataset.meta)


# ---------------------------------------------------------------------------
# Padded batching


@dataclass
class Batch:
    """Padded view of a group of samples.

    Padded positions hold value 0 and time 0; the boolean masks are the
    only source of truth for which entries are real.
    """

    values: np.ndarray        # [B, N, Lmax]
    times: np.ndarray         # [B, N, Lmax]
    obs_mask: np.ndarray      # [B, N, Lmax] bool
    query_times: np.ndarray   # [B, N, Qmax]
    query_mask: np.ndarray    # [B, N, Qmax] bool
    targets: np.ndarray       # [B, N, Qmax]
    sample_indices: list[int] = field(default_factory=list)

    @property
    def n_samples(self) -> int:
        return self.values.shape[0]


def batch_from_samples(samples: list[Sample], indices: list[int] | None = None) -> Batch:
    b = len(samples)
    n = samples[0].n_vars
    lmax = max(1, max(len(s.variables[v][0]) for s in samples for v in range(n)))
    qmax = max(1, max(len(s.variables[v][1]) for s in samples for v in range(n)))

    values = np.zeros((b, n, lmax))
    times = np.zeros((b, n, lmax))
    obs_mask = np.zeros((b, n, lmax), dtype=bool)
    query_times = np.zeros((b, n, qmax))
    query_mask = np.zeros((b, n, qmax), dtype=bool)
    targets = np.zeros((b, n, qmax))

    for i, sample in enumerate(samples):
        for v, (series, queries) in enumerate(sample.variables):
            ln = len(series)
            values[i, v, :ln] = series.values
            times[i, v, :ln] = series.times
            obs_mask[i, v, :ln] = True
            qn = len(queries)
            query_times[i, v, :qn] = queries.times
            query_mask[i, v, :qn] = True
            if queries.targets is not None:
                targets[i, v, :qn] = queries.targets

    return Batch(values, times, obs_mask, query_times, query_mask, targets,
                 list(indices) if indices is not None else list(range(b)))


def make_batches(dataset: Dataset, batch_size: int, shuffle_seed=None) -> list[Batch]:
    """Cut the dataset into padded batches; the last one may be short.

    When ``shuffle_seed`` is given (any value np.random.default_rng
    accepts, e.g. an (seed, epoch) tuple), the sample order is a
    deterministic function of it.
    """
    if batch_size < 1:
        raise ConfigError("make_batches: batch_size must be >= 1")
    n = len(dataset)
    if shuffle_seed is None:
        order = np.arange(n)
    else:
        order = np.random.default_rng(shuffle_seed).permutation(n)
    batches = []
    for start in range(0, n, batch_size):
        idx = order[start:start + batch_size].tolist()
        batches.append(batch_from_samples([dataset.samples[i] for i in idx], idx))
    return batches


def unpad_batch(batch: Batch) -> list[list[tuple[VariableSeries, QuerySet]]]:
    """Recover the ragged per-variable content from a padded batch.

    Returns, per sample, the list of (series, queries) pairs.  Spans are
    not stored in batches, so content rather than full Samples comes back.
    """
    out = []
    for i in range(batch.n_samples):
        variables = []
        for v in range(batch.values.shape[1]):
            om = batch.obs_mask[i, v]
            qm = batch.query_mask[i, v]
            series = VariableSeries(batch.times[i, v][om].copy(), batch.values[i, v][om].copy())
            queries = QuerySet(batch.query_times[i, v][qm].copy(), batch.targets[i, v][qm].copy())
            variables.append((series, queries))
        out.append(variables)
    return out
