"""Flat key-value run configuration.

One schema covers data generation, model dimensions, the training
recipe, and paths.  Values come from a plain text file of ``key = value``
lines (``#`` comments allowed), every key can be overridden by a
command-line flag of the same name, and the resolved configuration is
echoed into the run directory so a run can be reproduced from its own
artifacts.  Unknown keys are rejected.
"""

from __future__ import annotations

from dataclasses import dataclass, fields

from .data import GeneratorConfig
from .errors import ConfigError, ParseError
from .model import AiTConfig
from .training import TrainConfig

__all__ = ["RunConfig", "parse_config_file", "resolve_config", "echo_config"]


@dataclass
class RunConfig:
    # data generation
    n_vars: int = 6
    n_samples: int = 2000
    n_latents: int = 2
    rate: float = 1.0
    missingness: float = 0.5
    noise_std: float = 0.1
    obs_start: float = 0.0
    obs_end: float = 24.0
    fc_start: float = 24.0
    fc_end: float = 30.0
    queries_per_variable: int = 8
    regular: bool = False
    drop_variable_prob: float = 0.0
    # model
    hidden: int = 64
    n_heads: int = 4
    n_blocks: int = 3
    ffn_width: int = 0
    variant: str = "full"
    # fixed-grid equivalence experiment
    reg_d: int = 16
    # training recipe
    lr0: float = 1e-3
    batch_size: int = 32
    max_epochs: int = 1000
    patience: int = 40
    cosine_period: int = 40
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    # evaluation / timing
    eval_batch_size: int = 64
    timing_epochs: int = 3
    hardware_note: str = "unspecified-cpu"
    # paths and provenance
    dataset: str = ""
    checkpoint: str = ""
    sample_index: int = 0
    seed: int = 0

    def generator_config(self) -> GeneratorConfig:
        return GeneratorConfig(
            n_vars=self.n_vars,
            n_samples=self.n_samples,
            n_latents=self.n_latents,
            rate=self.rate,
            missingness=self.missingness,
            noise_std=self.noise_std,
            obs_span=(self.obs_start, self.obs_end),
            fc_span=(self.fc_start, self.fc_end),
            queries_per_variable=self.queries_per_variable,
            regular=self.regular,
            drop_variable_prob=self.drop_variable_prob,
        )

    def model_config(self, variant: str | None = None) -> AiTConfig:
        return AiTConfig(
            n_vars=self.n_vars,
            hidden=self.hidden,
            n_heads=self.n_heads,
            n_blocks=self.n_blocks,
            ffn_width=self.ffn_width,
            variant=variant if variant is not None else self.variant,
        )

    def train_config(self) -> TrainConfig:
        return TrainConfig(
            lr0=self.lr0,
            batch_size=self.batch_size,
            max_epochs=self.max_epochs,
            patience=self.patience,
            cosine_period=self.cosine_period,
            adam_beta1=self.adam_beta1,
            adam_beta2=self.adam_beta2,
            adam_eps=self.adam_eps,
            seed=self.seed,
        )


_FIELD_TYPES = {f.name: f.type for f in fields(RunConfig)}


def _coerce(key: str, raw: str):
    kind = _FIELD_TYPES[key]
    text = raw.strip()
    if kind in ("bool", bool):
        lowered = text.lower()
        if lowered in ("true", "1", "yes", "on"):
            return True
        if lowered in ("false", "0", "no", "off"):
            return False
        raise ConfigError(f"config key {key!r}: expected a boolean, got {raw!r}")
    try:
        if kind in ("int", int):
            return int(text)
        if kind in ("float", float):
            return float(text)
    except ValueError as exc:
        raise ConfigError(f"config key {key!r}: {exc}") from exc
    return text


def parse_config_file(path) -> dict:
    """Read ``key = value`` lines into a raw-string map."""
    values: dict[str, str] = {}
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            stripped = line.strip()
            if not stripped or stripped.startswith("#"):
                continue
            if "=" not in stripped:
                raise ParseError(f"{path}: line {lineno}: expected 'key = value'")
            key, _, value = stripped.partition("=")
            key = key.strip()
            if key not in _FIELD_TYPES:
                raise ConfigError(f"{path}: line {lineno}: unknown config key {key!r}")
            values[key] = value.strip()
    return values


def resolve_config(file_values: dict | None = None,
                   overrides: dict | None = None) -> RunConfig:
    """Defaults, then config file values, then command-line overrides."""
    cfg = RunConfig()
    for source in (file_values or {}, overrides or {}):
        for key, value in source.items():
            if key not in _FIELD_TYPES:
                raise ConfigError(f"unknown config key {key!r}")
            if value is None:
                continue
            setattr(cfg, key, _coerce(key, str(value)) if isinstance(value, str) else value)
    return cfg


def echo_config(cfg: RunConfig) -> str:
    """Render the resolved configuration as a loadable config file."""
    lines = []
    for f in sorted(fields(RunConfig), key=lambda f: f.name):
        value = getattr(cfg, f.name)
        if isinstance(value, bool):
            value = "true" if value else "false"
        lines.append(f"{f.name} = {value}")
    return "\n".join(lines) + "\n"
