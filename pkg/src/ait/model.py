"""The full forecasting architecture and its ablation variants.

Pipeline per batch: a per-variable temporal encoder (adaptive linear
layer with a learnable default query matrix) turns each ragged series
into a fixed-width dynamic embedding; a learnable static embedding is
fused in through a small MLP; stacked Transformer blocks attend across
the variable tokens; an adaptive linear predictor maps each variable's
latent vector to values at arbitrary query times.

Variants: ``rm_spattf`` drops the Transformer stack, ``rm_statve`` drops
the static embedding and fusion (the dynamic embedding passes through),
``rp_tsmlp`` swaps the predictor for an MLP over the concatenation of
the latent vector and an embedded query time.

All internals run batched: ragged content arrives as padded arrays with
masks and the stacked (3-D) tensor ops process every (sample, variable)
pair at once.  The semantics per pair match the single-instance layer in
``alinear`` exactly.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .alinear import (
    ALinearInput,
    ALinearParams,
    Mlp2,
    alinear_forward,
    apply_mlp2,
    export_weight_matrix,
    init_alinear,
    init_mlp2,
    register_alinear,
    register_mlp2,
    INIT_STD,
)
from .data import Batch, Sample
from .errors import ConfigError, ContractError
from .numerics import (
    ParameterSet,
    Tensor,
    add,
    as_tensor,
    concat_last,
    layer_norm,
    matmul,
    mul,
    repeat_rows,
    reshape,
    softmax_rows,
    sub,
    sum_all,
    sum_last,
    tile_rows,
    transpose_last2,
)

__all__ = [
    "VARIANTS",
    "AiTConfig",
    "AiTParams",
    "PredictionOutput",
    "init_ait",
    "parameter_set",
    "temporal_encode",
    "fuse_static",
    "spatial_encode",
    "predict",
    "forward",
    "mse_loss",
    "AiTModel",
    "StaticLinearModel",
    "ALinearRegularModel",
    "MeanBaseline",
    "baseline_static_linear",
    "baseline_mean",
    "model_from_description",
]

VARIANTS = ("full", "rm_spattf", "rm_statve", "rp_tsmlp")


@dataclass
class AiTConfig:
    n_vars: int
    hidden: int = 64
    n_heads: int = 4
    n_blocks: int = 3
    ffn_width: int = 0  # 0 means same as hidden
    variant: str = "full"

    def validate(self) -> None:
        if self.n_vars < 1:
            raise ConfigError("model: n_vars must be >= 1")
        if self.hidden < 1 or self.hidden % self.n_heads != 0:
            raise ConfigError(
                f"model: hidden ({self.hidden}) must be a positive multiple of "
                f"n_heads ({self.n_heads})"
            )
        if self.variant not in VARIANTS:
            raise ConfigError(f"model: unknown variant {self.variant!r}")
        if self.n_blocks < 1 and self.variant != "rm_spattf":
            raise ConfigError("model: n_blocks must be >= 1 unless variant is rm_spattf")

    @property
    def ffn(self) -> int:
        return self.ffn_width if self.ffn_width > 0 else self.hidden

    def to_dict(self) -> dict:
        return {
            "n_vars": self.n_vars,
            "hidden": self.hidden,
            "n_heads": self.n_heads,
            "n_blocks": self.n_blocks,
            "ffn_width": self.ffn_width,
            "variant": self.variant,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "AiTConfig":
        cfg = cls(**d)
        cfg.validate()
        return cfg


@dataclass
class HeadParams:
    wq: Tensor
    bq: Tensor
    wk: Tensor
    bk: Tensor
    wv: Tensor
    bv: Tensor


@dataclass
class BlockParams:
    heads: list[HeadParams]
    wo: Tensor
    bo: Tensor
    norm1_gain: Tensor
    norm1_bias: Tensor
    ffn: Mlp2
    norm2_gain: Tensor
    norm2_bias: Tensor


@dataclass
class AiTParams:
    """Structured parameter tree; flatten with parameter_set()."""

    config: AiTConfig
    temporal: ALinearParams               # q_default active, no fixed input length
    h_stat: Tensor | None                 # [N, D], absent under rm_statve
    fusion: Mlp2 | None                   # 2D -> D -> D, absent under rm_statve
    blocks: list[BlockParams] = field(default_factory=list)
    predictor: ALinearParams | None = None  # k_default active, no fixed output length
    tsmlp: Mlp2 | None = None             # 2D -> D -> 1, rp_tsmlp only
    phi: Mlp2 | None = None               # scalar -> D query-time embedder, rp_tsmlp only


def _init_block(d: int, n_heads: int, ffn_width: int, rng: np.random.Generator) -> BlockParams:
    dh = d // n_heads
    heads = []
    for _ in range(n_heads):
        heads.append(
            HeadParams(
                Tensor(rng.normal(0.0, INIT_STD, size=(d, dh))), Tensor(np.zeros(dh)),
                Tensor(rng.normal(0.0, INIT_STD, size=(d, dh))), Tensor(np.zeros(dh)),
                Tensor(rng.normal(0.0, INIT_STD, size=(d, dh))), Tensor(np.zeros(dh)),
            )
        )
    return BlockParams(
        heads=heads,
        wo=Tensor(rng.normal(0.0, INIT_STD, size=(d, d))),
        bo=Tensor(np.zeros(d)),
        norm1_gain=Tensor(np.ones(d)),
        norm1_bias=Tensor(np.zeros(d)),
        ffn=init_mlp2(d, ffn_width, d, rng),
        norm2_gain=Tensor(np.ones(d)),
        norm2_bias=Tensor(np.zeros(d)),
    )


def init_ait(config: AiTConfig, seed: int = 0) -> AiTParams:
    config.validate()
    rng = np.random.default_rng(seed)
    d = config.hidden

    temporal = init_alinear(d, rng, l_in=None, l_out=d)
    if config.variant == "rm_statve":
        h_stat, fusion = None, None
    else:
        h_stat = Tensor(rng.normal(0.0, INIT_STD, size=(config.n_vars, d)))
        fusion = init_mlp2(2 * d, d, d, rng)
    blocks = []
    if config.variant != "rm_spattf":
        blocks = [_init_block(d, config.n_heads, config.ffn, rng) for _ in range(config.n_blocks)]
    if config.variant == "rp_tsmlp":
        predictor = None
        tsmlp = init_mlp2(2 * d, d, 1, rng)
        phi = init_mlp2(1, d, d, rng)
    else:
        predictor = init_alinear(d, rng, l_in=d, l_out=None)
        tsmlp, phi = None, None
    return AiTParams(config, temporal, h_stat, fusion, blocks, predictor, tsmlp, phi)


def parameter_set(params: AiTParams) -> ParameterSet:
    ps = ParameterSet()
    register_alinear(ps, "temporal", params.temporal)
    if params.h_stat is not None:
        ps.add("h_stat", params.h_stat)
    if params.fusion is not None:
        register_mlp2(ps, "fusion", params.fusion)
    for i, block in enumerate(params.blocks):
        for h, head in enumerate(block.heads):
            ps.add(f"blocks.{i}.heads.{h}.wq", head.wq)
            ps.add(f"blocks.{i}.heads.{h}.bq", head.bq)
            ps.add(f"blocks.{i}.heads.{h}.wk", head.wk)
            ps.add(f"blocks.{i}.heads.{h}.bk", head.bk)
            ps.add(f"blocks.{i}.heads.{h}.wv", head.wv)
            ps.add(f"blocks.{i}.heads.{h}.bv", head.bv)
        ps.add(f"blocks.{i}.wo", block.wo)
        ps.add(f"blocks.{i}.bo", block.bo)
        ps.add(f"blocks.{i}.norm1_gain", block.norm1_gain)
        ps.add(f"blocks.{i}.norm1_bias", block.norm1_bias)
        register_mlp2(ps, f"blocks.{i}.ffn", block.ffn)
        ps.add(f"blocks.{i}.norm2_gain", block.norm2_gain)
        ps.add(f"blocks.{i}.norm2_bias", block.norm2_bias)
    if params.predictor is not None:
        register_alinear(ps, "predictor", params.predictor)
    if params.tsmlp is not None:
        register_mlp2(ps, "tsmlp", params.tsmlp)
    if params.phi is not None:
        register_mlp2(ps, "phi", params.phi)
    return ps


@dataclass
class PredictionOutput:
    """Predicted values aligned with the batch's query mask; entries at
    masked positions carry no meaning and are ignored downstream."""

    values: Tensor            # [B, N, Qmax]
    query_mask: np.ndarray    # [B, N, Qmax] bool


# ---------------------------------------------------------------------------
# Forward pieces


def temporal_encode(params: AiTParams, batch: Batch) -> Tensor:
    """Per (sample, variable): dynamic embedding of the ragged series.

    Variables with zero observations come out as exact zero vectors.
    """
    b, n, l = batch.values.shape
    d = params.config.hidden
    t_flat = as_tensor(batch.times.reshape(b * n * l, 1))
    keys = apply_mlp2(params.temporal.key, t_flat)            # [BNL, D]
    keys = reshape(keys, (b * n, l, d))
    scores = matmul(params.temporal.q_default, transpose_last2(keys))  # [BN, D, L]
    mask = np.broadcast_to(batch.obs_mask.reshape(b * n, 1, l), (b * n, d, l))
    w = softmax_rows(scores, mask, empty_rows="zero")
    x = as_tensor(batch.values.reshape(b * n, l, 1))
    h = matmul(w, x)                                          # [BN, D, 1]
    return reshape(h, (b, n, d))


def fuse_static(params: AiTParams, h_dyna: Tensor) -> Tensor:
    """Concatenate each variable's static embedding and project back to
    width D through the fusion MLP."""
    if params.h_stat is None or params.fusion is None:
        raise ContractError("fuse_static: this parameter set has no static embeddings")
    b, n, d = h_dyna.shape
    flat = reshape(h_dyna, (b * n, d))
    stat = tile_rows(params.h_stat, b)                        # [BN, D]
    fused = apply_mlp2(params.fusion, concat_last(flat, stat))
    return reshape(fused, (b, n, d))


def spatial_encode(params: AiTParams, h: Tensor) -> Tensor:
    """Stacked post-norm Transformer blocks over the N variable tokens.

    Attention uses the standard 1/sqrt(D/heads) temperature, unlike the
    adaptive linear layers which use none.
    """
    if params.config.variant == "rm_spattf":
        raise ContractError("spatial_encode: not available under rm_spattf")
    scale = 1.0 / np.sqrt(params.config.hidden / params.config.n_heads)
    for block in params.blocks:
        parts = None
        for head in block.heads:
            q = add(matmul(h, head.wq), head.bq)              # [B, N, dh]
            k = add(matmul(h, head.wk), head.bk)
            v = add(matmul(h, head.wv), head.bv)
            att = softmax_rows(mul(matmul(q, transpose_last2(k)), scale))
            out = matmul(att, v)
            parts = out if parts is None else concat_last(parts, out)
        attn = add(matmul(parts, block.wo), block.bo)
        h = layer_norm(add(h, attn), block.norm1_gain, block.norm1_bias)
        ffn = apply_mlp2(block.ffn, h)
        h = layer_norm(add(h, ffn), block.norm2_gain, block.norm2_bias)
    return h


def predict(params: AiTParams, h: Tensor, query_times: np.ndarray,
            query_mask: np.ndarray) -> PredictionOutput:
    """Map each variable's latent vector to values at its query times."""
    b, n, d = h.shape
    q = query_times.shape[-1]
    if params.config.variant == "rp_tsmlp":
        h_flat = reshape(h, (b * n, d))
        h_rep = repeat_rows(h_flat, q)                        # [BNQ, D]
        qt = as_tensor(query_times.reshape(b * n * q, 1))
        emb = apply_mlp2(params.phi, qt)                      # [BNQ, D]
        out = apply_mlp2(params.tsmlp, concat_last(h_rep, emb))  # [BNQ, 1]
        return PredictionOutput(reshape(out, (b, n, q)), query_mask)

    qt = as_tensor(query_times.reshape(b * n * q, 1))
    queries = apply_mlp2(params.predictor.query, qt)          # [BNQ, D]
    queries = reshape(queries, (b * n, q, d))
    scores = matmul(queries, transpose_last2(params.predictor.k_default))  # [BN, Q, D]
    w = softmax_rows(scores)
    y = matmul(w, reshape(h, (b * n, d, 1)))                  # [BN, Q, 1]
    return PredictionOutput(reshape(y, (b, n, q)), query_mask)


def forward(params: AiTParams, batch: Batch) -> PredictionOutput:
    """Full pipeline with the variant's stages included or skipped."""
    variant = params.config.variant
    h = temporal_encode(params, batch)
    if variant != "rm_statve":
        h = fuse_static(params, h)
    if variant != "rm_spattf":
        h = spatial_encode(params, h)
    return predict(params, h, batch.query_times, batch.query_mask)


def _loss_weights(query_mask: np.ndarray) -> np.ndarray:
    """Nested-mean weights: per-variable mean over its queries, mean over
    queried variables within a sample, mean over samples with queries."""
    qn = query_mask.sum(axis=-1)                  # [B, N]
    nprime = (qn > 0).sum(axis=-1)                # [B]
    bprime = int((nprime > 0).sum())
    if bprime == 0:
        raise ContractError("loss/metric undefined: batch has no queries at all")
    w = np.zeros(qn.shape)
    valid = qn > 0
    per_sample = np.broadcast_to(nprime[:, None], qn.shape)
    w[valid] = 1.0 / (qn[valid] * per_sample[valid] * bprime)
    return w


def mse_loss(pred: PredictionOutput, batch: Batch) -> Tensor:
    """Mean squared error with nested normalization: average over each
    variable's queries first, then over queried variables, then over
    samples.  Variables and samples without queries are excluded."""
    w = _loss_weights(batch.query_mask)
    diff = sub(pred.values, as_tensor(batch.targets))
    sq = mul(diff, diff)
    masked = mul(sq, as_tensor(batch.query_mask.astype(np.float64)))
    per_var = sum_last(masked)                    # [B, N]
    return sum_all(mul(per_var, as_tensor(w)))


# ---------------------------------------------------------------------------
# Trainable model wrappers (shared protocol: param_set, loss, predict_batch)


class AiTModel:
    """Bundles config, structured parameters and the flat parameter set."""

    kind = "ait"

    def __init__(self, config: AiTConfig, seed: int = 0):
        config.validate()
        self.config = config
        self.seed = seed
        self.params = init_ait(config, seed)
        self.param_set = parameter_set(self.params)

    def loss(self, batch: Batch) -> Tensor:
        return mse_loss(forward(self.params, batch), batch)

    def predict_batch(self, batch: Batch) -> np.ndarray:
        return forward(self.params, batch).values.data

    def describe(self) -> dict:
        return {"kind": self.kind, "config": self.config.to_dict()}

    def weight_matrices(self, sample: Sample) -> dict[str, np.ndarray]:
        """Realized adaptive weight matrices for one (normalized) sample,
        via the single-instance layer path."""
        out: dict[str, np.ndarray] = {}
        d = self.config.hidden
        for v, (series, queries) in enumerate(sample.variables):
            if len(series):
                w = export_weight_matrix(
                    self.params.temporal,
                    ALinearInput(x=series.values, s=series.times),
                )
                out[f"temporal_var{v}"] = w.data
            if self.params.predictor is not None and len(queries):
                w = export_weight_matrix(
                    self.params.predictor,
                    ALinearInput(x=np.zeros(d), t=queries.times),
                )
                out[f"predictor_var{v}"] = w.data
        return out


def _require_regular(batch: Batch, l_in: int, l_out: int) -> None:
    if not np.all(batch.obs_mask.sum(axis=-1) == l_in):
        raise ContractError(
            f"regular model: every variable needs exactly {l_in} observations"
        )
    if not np.all(batch.query_mask.sum(axis=-1) == l_out):
        raise ContractError(
            f"regular model: every variable needs exactly {l_out} queries"
        )


class _RegularGridModel:
    """Shared machinery for the fixed-grid models: one [L_out, L_in]
    row-stochastic map applied to every variable independently."""

    def __init__(self, l_in: int, l_out: int):
        self.l_in = l_in
        self.l_out = l_out

    def effective_weights(self) -> Tensor:
        raise NotImplementedError

    def _predict_tensor(self, batch: Batch) -> PredictionOutput:
        _require_regular(batch, self.l_in, self.l_out)
        b, n, _ = batch.values.shape
        w = self.effective_weights()
        x = as_tensor(batch.values.reshape(b * n, self.l_in))
        y = matmul(x, transpose_last2(w))                     # [BN, L_out]
        return PredictionOutput(reshape(y, (b, n, self.l_out)), batch.query_mask)

    def loss(self, batch: Batch) -> Tensor:
        return mse_loss(self._predict_tensor(batch), batch)

    def predict_batch(self, batch: Batch) -> np.ndarray:
        return self._predict_tensor(batch).values.data

    def weight_matrices(self, sample: Sample) -> dict[str, np.ndarray]:
        return {self.kind: self.effective_weights().data}


class StaticLinearModel(_RegularGridModel):
    """Dense trained map with a row-softmax, so it stays comparable to
    the adaptive layer (both are convex-combination maps)."""

    kind = "static_linear"

    def __init__(self, l_in: int, l_out: int, seed: int = 0):
        super().__init__(l_in, l_out)
        self.seed = seed
        rng = np.random.default_rng(seed)
        self.w_raw = Tensor(rng.normal(0.0, INIT_STD, size=(l_out, l_in)))
        self.param_set = ParameterSet({"w_raw": self.w_raw})

    def effective_weights(self) -> Tensor:
        return softmax_rows(self.w_raw)

    def describe(self) -> dict:
        return {"kind": self.kind, "config": {"l_in": self.l_in, "l_out": self.l_out}}


class ALinearRegularModel(_RegularGridModel):
    """Adaptive linear layer in default-default mode on a fixed grid: a
    fixed row-stochastic map realized as softmax(Q_default K_default^T)."""

    kind = "alinear_regular"

    def __init__(self, l_in: int, l_out: int, d: int = 16, seed: int = 0):
        super().__init__(l_in, l_out)
        self.d = d
        self.seed = seed
        rng = np.random.default_rng(seed)
        self.alinear = init_alinear(d, rng, l_in=l_in, l_out=l_out)
        ps = ParameterSet()
        register_alinear(ps, "alinear", self.alinear)
        self.param_set = ps

    def effective_weights(self) -> Tensor:
        scores = matmul(self.alinear.q_default, transpose_last2(self.alinear.k_default))
        return softmax_rows(scores)

    def forward_single(self, x) -> Tensor:
        """Contract path for one series, for cross-checks."""
        return alinear_forward(self.alinear, ALinearInput(x=x))

    def describe(self) -> dict:
        return {"kind": self.kind,
                "config": {"l_in": self.l_in, "l_out": self.l_out, "d": self.d}}


class MeanBaseline:
    """Predicts each variable's observed historical mean at every query;
    variables with no observations predict 0 (the normalized mean)."""

    kind = "mean"

    def __init__(self):
        self.param_set = ParameterSet()

    def predict_batch(self, batch: Batch) -> np.ndarray:
        counts = batch.obs_mask.sum(axis=-1)                  # [B, N]
        sums = (batch.values * batch.obs_mask).sum(axis=-1)
        means = np.where(counts > 0, sums / np.maximum(counts, 1), 0.0)
        q = batch.query_times.shape[-1]
        return np.repeat(means[:, :, None], q, axis=2)

    def loss(self, batch: Batch) -> Tensor:
        pred = PredictionOutput(Tensor(self.predict_batch(batch)), batch.query_mask)
        return mse_loss(pred, batch)

    def describe(self) -> dict:
        return {"kind": self.kind, "config": {}}


def baseline_static_linear(l_in: int, l_out: int, seed: int = 0) -> StaticLinearModel:
    return StaticLinearModel(l_in, l_out, seed)


def baseline_mean() -> MeanBaseline:
    return MeanBaseline()


def model_from_description(desc: dict, seed: int = 0):
    """Rebuild a model wrapper from a checkpoint description."""
    kind = desc["kind"]
    cfg = desc.get("config", {})
    if kind == "ait":
        return AiTModel(AiTConfig.from_dict(cfg), seed)
    if kind == "static_linear":
        return StaticLinearModel(cfg["l_in"], cfg["l_out"], seed)
    if kind == "alinear_regular":
        return ALinearRegularModel(cfg["l_in"], cfg["l_out"], cfg.get("d", 16), seed)
    if kind == "mean":
        return MeanBaseline()
    raise ConfigError(f"unknown model kind {kind!r}")
