"""The adaptive linear layer: a linear map whose weight matrix is
softmax-normalized dot-product attention between embeddings of the input
and output time points.

Either side can run in dynamic mode (embed the provided time points
through a two-layer MLP) or default mode (use a learnable matrix fixed
at construction).  All four combinations are supported and every
realized weight matrix is row-stochastic, so each output entry is a
convex combination of the unmasked inputs.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DimensionError
from .numerics import (
    ParameterSet,
    Tensor,
    add,
    as_tensor,
    matmul,
    relu,
    reshape,
    softmax_rows,
    transpose_last2,
)

__all__ = [
    "Mlp2",
    "init_mlp2",
    "apply_mlp2",
    "register_mlp2",
    "ALinearParams",
    "ALinearInput",
    "init_alinear",
    "register_alinear",
    "embed_keys",
    "embed_queries",
    "alinear_forward",
    "export_weight_matrix",
]

INIT_STD = 0.02


@dataclass
class Mlp2:
    """Two linear layers with a ReLU between them."""

    w1: Tensor
    b1: Tensor
    w2: Tensor
    b2: Tensor


def init_mlp2(d_in: int, d_hidden: int, d_out: int, rng: np.random.Generator) -> Mlp2:
    return Mlp2(
        Tensor(rng.normal(0.0, INIT_STD, size=(d_in, d_hidden))),
        Tensor(np.zeros(d_hidden)),
        Tensor(rng.normal(0.0, INIT_STD, size=(d_hidden, d_out))),
        Tensor(np.zeros(d_out)),
    )


def apply_mlp2(p: Mlp2, x) -> Tensor:
    """x: [..., d_in] (2-D or stacked 3-D) -> [..., d_out]."""
    h = relu(add(matmul(x, p.w1), p.b1))
    return add(matmul(h, p.w2), p.b2)


def register_mlp2(params: ParameterSet, prefix: str, p: Mlp2) -> None:
    params.add(f"{prefix}.w1", p.w1)
    params.add(f"{prefix}.b1", p.b1)
    params.add(f"{prefix}.w2", p.w2)
    params.add(f"{prefix}.b2", p.b2)


@dataclass
class ALinearParams:
    """Weights of one adaptive linear layer.

    ``k_default`` exists iff the layer was constructed with a fixed
    input length, ``q_default`` iff with a fixed output length.  The
    embedders are always present; in default mode they simply go unused.
    """

    d: int
    key: Mlp2
    query: Mlp2
    k_default: Tensor | None = None
    q_default: Tensor | None = None


@dataclass
class ALinearInput:
    """One forward problem: data x, optional input time points s with an
    optional validity mask, and optional output time points t."""

    x: object
    s: object = None
    s_mask: np.ndarray | None = None
    t: object = None


def init_alinear(
    d: int,
    rng: np.random.Generator,
    l_in: int | None = None,
    l_out: int | None = None,
) -> ALinearParams:
    """Construct layer weights; pass a fixed length to enable the
    corresponding default matrix."""
    if d < 1:
        raise ConfigError("alinear: embedding width d must be >= 1")
    params = ALinearParams(
        d=d,
        key=init_mlp2(1, d, d, rng),
        query=init_mlp2(1, d, d, rng),
    )
    if l_in is not None:
        params.k_default = Tensor(rng.normal(0.0, INIT_STD, size=(l_in, d)))
    if l_out is not None:
        params.q_default = Tensor(rng.normal(0.0, INIT_STD, size=(l_out, d)))
    return params


def register_alinear(params: ParameterSet, prefix: str, p: ALinearParams) -> None:
    register_mlp2(params, f"{prefix}.key", p.key)
    register_mlp2(params, f"{prefix}.query", p.query)
    if p.k_default is not None:
        params.add(f"{prefix}.k_default", p.k_default)
    if p.q_default is not None:
        params.add(f"{prefix}.q_default", p.q_default)


def _embed(mlp: Mlp2, points) -> Tensor:
    pts = as_tensor(points)
    if pts.ndim != 1:
        raise DimensionError(f"time points must be 1-D, got shape {pts.shape}")
    col = reshape(pts, (pts.shape[0], 1))
    return apply_mlp2(mlp, col)


def embed_keys(params: ALinearParams, s) -> Tensor:
    """Embed input time points: [L_in] -> [L_in, D], row i a function of
    s[i] alone."""
    return _embed(params.key, s)


def embed_queries(params: ALinearParams, t) -> Tensor:
    """Embed output time points: [L_out] -> [L_out, D]."""
    return _embed(params.query, t)


def _resolve_sides(params: ALinearParams, inp: ALinearInput) -> tuple[Tensor, Tensor, Tensor]:
    x = as_tensor(inp.x)
    if x.ndim != 1:
        raise DimensionError(f"alinear: input data must be 1-D, got shape {x.shape}")
    l_in = x.shape[0]

    if inp.s is not None:
        s = as_tensor(inp.s)
        if s.shape != (l_in,):
            raise DimensionError(
                f"alinear: time points shape {s.shape} does not match input length {l_in}"
            )
        keys = embed_keys(params, s)
    elif params.k_default is not None:
        if params.k_default.shape[0] != l_in:
            raise DimensionError(
                f"alinear: input length {l_in} does not match fixed length "
                f"{params.k_default.shape[0]}"
            )
        keys = params.k_default
    else:
        raise ConfigError("alinear: no input time points and no default key matrix")

    if inp.t is not None:
        queries = embed_queries(params, as_tensor(inp.t))
    elif params.q_default is not None:
        queries = params.q_default
    else:
        raise ConfigError("alinear: no output time points and no default query matrix")
    return x, keys, queries


def _realized_weights(params: ALinearParams, inp: ALinearInput) -> tuple[Tensor, Tensor]:
    x, keys, queries = _resolve_sides(params, inp)
    scores = matmul(queries, transpose_last2(keys))  # [L_out, L_in], no temperature
    if inp.s_mask is not None:
        if inp.s is None:
            raise ConfigError("alinear: s_mask given without input time points")
        m = np.asarray(inp.s_mask, dtype=bool)
        if m.shape != (x.shape[0],):
            raise DimensionError(
                f"alinear: mask shape {m.shape} does not match input length {x.shape[0]}"
            )
        mask = np.broadcast_to(m, scores.shape)
        # All-masked input uses the zero-row convention: the layer then
        # returns exact zeros instead of erroring (callers rely on this
        # for variables with no observations).
        w = softmax_rows(scores, mask, empty_rows="zero")
    else:
        w = softmax_rows(scores)
    return w, x


def alinear_forward(params: ALinearParams, inp: ALinearInput) -> Tensor:
    """Run the layer: y = softmax(Q Kt) x, a length-L_out tensor.

    With a fully masked input the output is the exact zero vector.
    """
    w, x = _realized_weights(params, inp)
    y = matmul(w, reshape(x, (x.shape[0], 1)))
    return reshape(y, (w.shape[0],))


def export_weight_matrix(params: ALinearParams, inp: ALinearInput) -> Tensor:
    """Return the realized weight matrix used by alinear_forward for the
    same input (rows sum to 1; masked columns are exactly 0)."""
    w, _ = _realized_weights(params, inp)
    return w
