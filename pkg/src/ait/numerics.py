"""Dense float64 tensors with taped reverse-mode differentiation.

Execution is eager: every operation computes its result with numpy
immediately and, when a Tape is active and a differentiable input is
involved, appends a backward rule to that tape.  Gradients come from
replaying the tape in reverse (`backward`) and can be cross-checked
against the central-difference oracle (`finite_diff_grad`).

Broadcasting is deliberately narrow: elementwise operations accept
same-shape operands, a scalar against a tensor, and (for add/sub) a 1-D
bias against the last axis of a higher-rank tensor.  Everything else is
a DimensionError.  matmul additionally supports a stacked form where a
leading axis enumerates independent 2-D problems.
"""

from __future__ import annotations

import numpy as np

from .errors import ContractError, DimensionError, EmptyRowError

__all__ = [
    "Tensor",
    "Tape",
    "ParameterSet",
    "as_tensor",
    "add",
    "sub",
    "mul",
    "matmul",
    "transpose_last2",
    "relu",
    "softmax_rows",
    "layer_norm",
    "concat_last",
    "reshape",
    "sum_all",
    "sum_last",
    "tile_rows",
    "repeat_rows",
    "backward",
    "finite_diff_grad",
    "relative_gradient_error",
    "check_gradients",
]


class Tensor:
    """A dense float64 array plus differentiation metadata.

    Tensors produced by operations are treated as immutable.  Leaf
    tensors created with ``requires_grad=True`` act as trainable
    parameters; their ``data`` may be updated in place between forward
    passes (optimizer steps) but never during one.
    """

    __slots__ = ("data", "requires_grad", "grad", "_tape")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self._tape: "Tape | None" = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        return float(self.data)

    def __float__(self) -> float:
        return float(self.data)

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.data.shape}{flag})"

    # Operator sugar; all dispatch to the module-level ops.
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)


def as_tensor(x) -> Tensor:
    """Lift numbers and arrays to constant tensors; pass tensors through."""
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=np.float64))


class Tape:
    """Execution-ordered record of differentiable operations.

    Used as a context manager around a forward pass.  Each record holds
    the operation's input tensors, its output tensor, and a rule mapping
    the output adjoint to per-input adjoint contributions.  Inputs of a
    record were necessarily produced before it, so one reverse sweep
    over the records visits every operation exactly once.
    """

    __slots__ = ("records",)

    def __init__(self):
        self.records: list[tuple[tuple[Tensor, ...], Tensor, object]] = []

    def __enter__(self) -> "Tape":
        _TAPES.append(self)
        return self

    def __exit__(self, exc_type, exc, tb):
        popped = _TAPES.pop()
        assert popped is self, "tapes must nest"
        return False

    def __len__(self) -> int:
        return len(self.records)


_TAPES: list[Tape] = []


def _active_tape() -> Tape | None:
    return _TAPES[-1] if _TAPES else None


def _emit(out_data: np.ndarray, inputs: tuple[Tensor, ...], rule) -> Tensor:
    """Wrap an op result, recording it when gradients are being traced."""
    tape = _active_tape()
    if tape is not None and any(t.requires_grad for t in inputs):
        out = Tensor(out_data, requires_grad=True)
        out._tape = tape
        tape.records.append((inputs, out, rule))
        return out
    return Tensor(out_data)


class ParameterSet:
    """Named map from dot-separated paths to trainable tensors.

    Names are unique and iteration is always lexicographic, which keeps
    optimizer updates and gradient reports deterministic.
    """

    def __init__(self, entries: dict[str, Tensor] | None = None):
        self._entries: dict[str, Tensor] = {}
        if entries:
            for name, t in entries.items():
                self.add(name, t)

    def add(self, name: str, tensor: Tensor) -> Tensor:
        if name in self._entries:
            raise ContractError(f"duplicate parameter name {name!r}")
        tensor.requires_grad = True
        self._entries[name] = tensor
        return tensor

    def __getitem__(self, name: str) -> Tensor:
        return self._entries[name]

    def __contains__(self, name: str) -> bool:
        return name in self._entries

    def __len__(self) -> int:
        return len(self._entries)

    def names(self) -> list[str]:
        return sorted(self._entries)

    def items(self) -> list[tuple[str, Tensor]]:
        return [(name, self._entries[name]) for name in self.names()]

    def __iter__(self):
        return iter(self.names())

    def n_values(self) -> int:
        return sum(t.size for _, t in self.items())

    def snapshot(self) -> dict[str, np.ndarray]:
        """Copy current parameter values (e.g. for best-epoch checkpoints)."""
        return {name: t.data.copy() for name, t in self.items()}

    def restore(self, values: dict[str, np.ndarray]) -> None:
        """Write values back in place; shapes must match exactly."""
        for name, t in self.items():
            v = np.asarray(values[name], dtype=np.float64)
            if v.shape != t.data.shape:
                raise DimensionError(
                    f"restore: parameter {name!r} has shape {t.data.shape}, "
                    f"stored value has shape {v.shape}"
                )
            t.data[...] = v


# ---------------------------------------------------------------------------
# Elementwise operations


def _pair_kind(a: Tensor, b: Tensor, op: str, allow_bias: bool) -> str:
    """Classify an operand pair under the narrow broadcasting rules."""
    if a.shape == b.shape:
        return "same"
    if a.ndim == 0:
        return "a_scalar"
    if b.ndim == 0:
        return "b_scalar"
    if allow_bias and b.ndim == 1 and a.ndim >= 2 and a.shape[-1] == b.shape[0]:
        return "b_bias"
    if allow_bias and a.ndim == 1 and b.ndim >= 2 and b.shape[-1] == a.shape[0]:
        return "a_bias"
    raise DimensionError(f"{op}: incompatible shapes {a.shape} and {b.shape}")

def _reduce_adjoint(dy: np.ndarray, kind: str, side: str) -> np.ndarray:
    """Sum an output adjoint down to the shape of a broadcast operand."""
    if kind == f"{side}_scalar":
        return np.asarray(dy.sum())
    if kind == f"{side}_bias":
        # bias over the last axis: fold every leading axis
        return dy.reshape(-1, dy.shape[-1]).sum(axis=0)
    return dy


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    kind = _pair_kind(a, b, "add", allow_bias=True)
    out = a.data + b.data

    def rule(dy):
        return (_reduce_adjoint(dy, kind, "a"), _reduce_adjoint(dy, kind, "b"))

    return _emit(out, (a, b), rule)


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    kind = _pair_kind(a, b, "sub", allow_bias=True)
    out = a.data - b.data

    def rule(dy):
        return (_reduce_adjoint(dy, kind, "a"), -_reduce_adjoint(dy, kind, "b"))

    return _emit(out, (a, b), rule)


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    kind = _pair_kind(a, b, "mul", allow_bias=False)
    out = a.data * b.data

    def rule(dy):
        return (
            _reduce_adjoint(dy * b.data, kind, "a"),
            _reduce_adjoint(dy * a.data, kind, "b"),
        )

    return _emit(out, (a, b), rule)


# ---------------------------------------------------------------------------
# Linear algebra


def matmul(a, b) -> Tensor:
    """Matrix product with the taped rule dA = dY.Bt, dB = At.dY.

    Accepts 2-D operands, or a stacked form where one or both operands
    carry one leading batch axis ([G,M,K] x [G,K,N], [M,K] x [G,K,N],
    [G,M,K] x [K,N]).  A 2-D operand shared across the stack has its
    adjoint summed over the stack axis.
    """
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim not in (2, 3) or b.ndim not in (2, 3):
        raise DimensionError(
            f"matmul: operands must be 2-D or stacked 3-D, got {a.shape} and {b.shape}"
        )
    if a.shape[-1] != b.shape[-2]:
        raise DimensionError(
            f"matmul: inner dimensions disagree for shapes {a.shape} and {b.shape}"
        )
    if a.ndim == 3 and b.ndim == 3 and a.shape[0] != b.shape[0]:
        raise DimensionError(
            f"matmul: stack extents disagree for shapes {a.shape} and {b.shape}"
        )
    out = np.matmul(a.data, b.data)

    def rule(dy):
        da = np.matmul(dy, b.data.swapaxes(-1, -2))
        db = np.matmul(a.data.swapaxes(-1, -2), dy)
        if a.ndim == 2 and da.ndim == 3:
            da = da.sum(axis=0)
        if b.ndim == 2 and db.ndim == 3:
            db = db.sum(axis=0)
        return (da, db)

    return _emit(out, (a, b), rule)


def transpose_last2(a) -> Tensor:
    """Swap the last two axes (plain transpose for 2-D tensors)."""
    a = as_tensor(a)
    if a.ndim < 2:
        raise DimensionError(f"transpose_last2: needs >= 2 axes, got shape {a.shape}")
    out = np.ascontiguousarray(a.data.swapaxes(-1, -2))

    def rule(dy):
        return (dy.swapaxes(-1, -2),)

    return _emit(out, (a,), rule)


# ---------------------------------------------------------------------------
# Nonlinearities and normalization


def relu(x) -> Tensor:
    """Elementwise max(0, x); the backward rule passes zero at exactly 0."""
    x = as_tensor(x)
    out = np.maximum(x.data, 0.0)

    def rule(dy):
        return (dy * (x.data > 0.0),)

    return _emit(out, (x,), rule)


def softmax_rows(logits, mask=None, empty_rows: str = "error") -> Tensor:
    """Row-wise softmax over the last axis with optional masking.

    The row maximum (over unmasked entries only) is subtracted before
    exponentiation for stability; the result is mathematically the plain
    softmax.  Masked entries receive weight exactly 0 and every row sums
    to 1.  A row with no unmasked entries raises EmptyRowError unless
    ``empty_rows="zero"`` is requested, in which case that row comes back
    as exact zeros with zero gradient.

    Args:
        logits: tensor with at least one axis; a 1-D tensor is one row.
        mask: optional boolean array of the same shape, True at valid
            entries.
        empty_rows: "error" (default) or "zero".
    """
    if empty_rows not in ("error", "zero"):
        raise ContractError(f"softmax_rows: unknown empty_rows mode {empty_rows!r}")
    x = as_tensor(logits)
    if x.ndim < 1:
        raise DimensionError("softmax_rows: logits need at least one axis")
    z = x.data
    if mask is not None:
        m = mask.data if isinstance(mask, Tensor) else np.asarray(mask)
        m = m.astype(bool)
        if m.shape != z.shape:
            raise DimensionError(
                f"softmax_rows: mask shape {m.shape} != logits shape {z.shape}"
            )
    else:
        m = None

    if z.shape[-1] == 0:
        empty = np.ones(z.shape[:-1], dtype=bool)
        e = np.zeros_like(z)
    elif m is None:
        empty = np.zeros(z.shape[:-1], dtype=bool)
        e = np.exp(z - z.max(axis=-1, keepdims=True))
    else:
        empty = ~m.any(axis=-1)
        masked = np.where(m, z, -np.inf)
        rowmax = masked.max(axis=-1, keepdims=True)
        # exp(-inf) underflows cleanly to exact 0 at masked positions
        safe_max = np.where(np.isfinite(rowmax), rowmax, 0.0)
        e = np.exp(np.where(m, z - safe_max, -np.inf))

    if empty.any() and empty_rows == "error":
        raise EmptyRowError("softmax_rows: row with zero unmasked entries")
    denom = e.sum(axis=-1, keepdims=True)
    denom = np.where(denom > 0.0, denom, 1.0)
    y = e / denom

    def rule(dy):
        inner = (dy * y).sum(axis=-1, keepdims=True)
        return (y * (dy - inner),)

    return _emit(y, (x,), rule)


def layer_norm(x, gain, bias, eps: float = 1e-5) -> Tensor:
    """Normalize the last axis to zero mean, unit variance, then apply
    the affine map ``gain * xhat + bias``."""
    x, g, b = as_tensor(x), as_tensor(gain), as_tensor(bias)
    if x.ndim < 1 or x.shape[-1] < 1:
        raise DimensionError(f"layer_norm: bad input shape {x.shape}")
    d = x.shape[-1]
    if g.shape != (d,) or b.shape != (d,):
        raise DimensionError(
            f"layer_norm: gain/bias shapes {g.shape}/{b.shape} do not match last axis {d}"
        )
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    out = xhat * g.data + b.data

    def rule(dy):
        dxhat = dy * g.data
        m1 = dxhat.mean(axis=-1, keepdims=True)
        m2 = (dxhat * xhat).mean(axis=-1, keepdims=True)
        dx = inv * (dxhat - m1 - xhat * m2)
        if dy.ndim > 1:
            lead = tuple(range(dy.ndim - 1))
            dg = (dy * xhat).sum(axis=lead)
            db = dy.sum(axis=lead)
        else:
            dg = dy * xhat
            db = dy.copy()
        return (dx, dg, db)

    return _emit(out, (x, g, b), rule)


# ---------------------------------------------------------------------------
# Shape manipulation


def concat_last(a, b) -> Tensor:
    """Concatenate along the last axis; leading shapes must agree."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim != b.ndim or a.ndim < 1 or a.shape[:-1] != b.shape[:-1]:
        raise DimensionError(
            f"concat_last: leading shapes disagree for {a.shape} and {b.shape}"
        )
    p = a.shape[-1]
    out = np.concatenate([a.data, b.data], axis=-1)

    def rule(dy):
        return (
            np.ascontiguousarray(dy[..., :p]),
            np.ascontiguousarray(dy[..., p:]),
        )

    return _emit(out, (a, b), rule)


def reshape(x, shape) -> Tensor:
    x = as_tensor(x)
    shape = tuple(int(s) for s in shape)
    if int(np.prod(shape, dtype=np.int64)) != x.size:
        raise DimensionError(f"reshape: cannot view {x.shape} as {shape}")
    out = x.data.reshape(shape)

    def rule(dy):
        return (dy.reshape(x.shape),)

    return _emit(out, (x,), rule)


def sum_all(x) -> Tensor:
    """Full reduction to a scalar (shape ())."""
    x = as_tensor(x)
    out = x.data.sum()

    def rule(dy):
        return (np.broadcast_to(dy, x.shape).copy(),)

    return _emit(out, (x,), rule)


def sum_last(x) -> Tensor:
    """Sum over the last axis."""
    x = as_tensor(x)
    if x.ndim < 1:
        raise DimensionError("sum_last: needs at least one axis")
    out = x.data.sum(axis=-1)

    def rule(dy):
        return (np.broadcast_to(dy[..., None], x.shape).copy(),)

    return _emit(out, (x,), rule)


def tile_rows(x, reps: int) -> Tensor:
    """Repeat a 2-D block vertically: [N,D] -> [reps*N, D] in block order."""
    x = as_tensor(x)
    if x.ndim != 2:
        raise DimensionError(f"tile_rows: expected 2-D input, got shape {x.shape}")
    if reps < 1:
        raise ContractError("tile_rows: reps must be >= 1")
    n, d = x.shape
    out = np.tile(x.data, (reps, 1))

    def rule(dy):
        return (dy.reshape(reps, n, d).sum(axis=0),)

    return _emit(out, (x,), rule)


def repeat_rows(x, reps: int) -> Tensor:
    """Repeat each row of a 2-D tensor ``reps`` times (interleaved)."""
    x = as_tensor(x)
    if x.ndim != 2:
        raise DimensionError(f"repeat_rows: expected 2-D input, got shape {x.shape}")
    if reps < 1:
        raise ContractError("repeat_rows: reps must be >= 1")
    n, d = x.shape
    out = np.repeat(x.data, reps, axis=0)

    def rule(dy):
        return (dy.reshape(n, reps, d).sum(axis=1),)

    return _emit(out, (x,), rule)


# ---------------------------------------------------------------------------
# Differentiation


def backward(loss: Tensor, params: ParameterSet) -> dict[str, Tensor]:
    """Reverse-sweep the tape that produced ``loss``.

    Returns a gradient tensor per parameter; parameters that do not
    reach the loss get exact zeros.  Gradients are also stored on each
    parameter's ``grad`` field.
    """
    if not isinstance(loss, Tensor) or loss.ndim != 0:
        raise ContractError("backward: loss must be a scalar tensor")
    tape = loss._tape
    if tape is None and not loss.requires_grad:
        raise ContractError("backward: loss was not produced on an active tape")

    adjoint: dict[int, np.ndarray] = {id(loss): np.ones((), dtype=np.float64)}
    if tape is not None:
        for inputs, out, rule in reversed(tape.records):
            dy = adjoint.pop(id(out), None)
            if dy is None:
                continue
            for t, contrib in zip(inputs, rule(dy)):
                if contrib is None or not t.requires_grad:
                    continue
                acc = adjoint.get(id(t))
                adjoint[id(t)] = contrib if acc is None else acc + contrib

    grads: dict[str, Tensor] = {}
    for name, p in params.items():
        g = adjoint.get(id(p))
        if g is None:
            g = np.zeros_like(p.data)
        else:
            g = np.asarray(g, dtype=np.float64).reshape(p.data.shape)
        p.grad = g
        grads[name] = Tensor(g)
    return grads


def finite_diff_grad(f, params: ParameterSet, h: float = 1e-5) -> dict[str, Tensor]:
    """Central-difference gradient oracle: (f(p+h.e) - f(p-h.e)) / 2h.

    ``f`` must be a deterministic, pure scalar function of the parameter
    values.  Parameters are perturbed in place and restored exactly.
    """
    grads: dict[str, Tensor] = {}
    for name, p in params.items():
        flat = p.data.reshape(-1)
        g = np.zeros_like(flat)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            fp = float(f(params))
            flat[i] = orig - h
            fm = float(f(params))
            flat[i] = orig
            g[i] = (fp - fm) / (2.0 * h)
        grads[name] = Tensor(g.reshape(p.data.shape))
    return grads


def relative_gradient_error(
    analytic: dict[str, Tensor], numeric: dict[str, Tensor]
) -> dict[str, float]:
    """Per-parameter ||g_ad - g_fd||_inf / max(1, ||g_fd||_inf)."""
    errors = {}
    for name in sorted(analytic):
        ga = analytic[name].data
        gf = numeric[name].data
        diff = np.abs(ga - gf).max() if ga.size else 0.0
        scale = max(1.0, np.abs(gf).max() if gf.size else 0.0)
        errors[name] = float(diff / scale)
    return errors


def check_gradients(
    loss_fn, params: ParameterSet, h: float = 1e-5
) -> dict[str, float]:
    """Compare taped gradients of ``loss_fn(params)`` against the
    finite-difference oracle; returns the per-parameter relative error."""
    with Tape():
        loss = loss_fn(params)
    analytic = backward(loss, params)
    numeric = finite_diff_grad(lambda ps: float(loss_fn(ps)), params, h=h)
    return relative_gradient_error(analytic, numeric)


def randomize_parameters(params: ParameterSet, rng: np.random.Generator,
                         scale: float = 0.5) -> None:
    """Move all parameters to a generic random point, in place.

    Gradient checks at freshly initialized values sit in a stiff region:
    tiny weights leave layer-norm inputs with feature variance below the
    normalization eps, which inflates finite-difference truncation error
    without any analytic-gradient defect.  Checking at an O(1) random
    point avoids that degeneracy.
    """
    for _, t in params.items():
        t.data[...] = rng.normal(0.0, scale, size=t.data.shape)
