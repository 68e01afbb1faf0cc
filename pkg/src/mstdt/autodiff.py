"""Dense float64 tensors with reverse-mode automatic differentiation.

Every differentiable operation records its inputs and a vector-Jacobian
closure on the output node; ``backward`` replays the recorded graph in
reverse topological order and frees it afterwards. Values are always
64-bit; masks are plain boolean numpy arrays and never differentiated.
"""

from __future__ import annotations

import math
from collections.abc import Sequence

import numpy as np

from .errors import AllMaskedError, ContractError, NumericError

Array = np.ndarray

_GELU_C = math.sqrt(2.0 / math.pi)
_GELU_A = 0.044715


class Tensor:
    """A numpy array plus an optional gradient buffer and tape node.

    Tensors created with ``requires_grad=True`` are leaves (parameters);
    their ``grad`` starts at zero and is repopulated by each ``backward``
    call. Tensors produced by operations inherit ``requires_grad`` from
    their inputs and carry the recorded tape until backward frees it.
    """

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_vjp")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.array(data, dtype=np.float64)
        self.requires_grad = requires_grad
        self.grad: Array | None = np.zeros_like(self.data) if requires_grad else None
        self._parents: tuple[Tensor, ...] = ()
        self._vjp = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def item(self) -> float:
        if self.data.size != 1:
            raise ContractError(f"item() on tensor of shape {self.shape}")
        return float(self.data.reshape(()))

    def has_nonfinite(self) -> bool:
        return not bool(np.isfinite(self.data).all())

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag})"

    # Arithmetic sugar; scalars are folded in as constants.
    def __add__(self, other):
        return add(self, _coerce(other))

    def __radd__(self, other):
        return add(_coerce(other), self)

    def __sub__(self, other):
        return sub(self, _coerce(other))

    def __rsub__(self, other):
        return sub(_coerce(other), self)

    def __mul__(self, other):
        return mul(self, _coerce(other))

    def __rmul__(self, other):
        return mul(_coerce(other), self)

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            raise ContractError("tensor/tensor division is not supported")
        return mul(self, _coerce(1.0 / float(other)))

    def __neg__(self):
        return mul(self, _coerce(-1.0))

    def __matmul__(self, other):
        return matmul(self, other)


def _coerce(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=np.float64))


def _from_op(data: Array, parents: tuple[Tensor, ...], vjp) -> Tensor:
    out = Tensor(data)
    if any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = parents
        out._vjp = vjp
    return out


def _unbroadcast(g: Array, shape: tuple[int, ...]) -> Array:
    """Sum ``g`` down to ``shape``, undoing numpy broadcasting."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, extent in enumerate(shape):
        if extent == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g.reshape(shape)


# ---------------------------------------------------------------------------
# elementwise ops
# ---------------------------------------------------------------------------


def add(a: Tensor, b: Tensor) -> Tensor:
    data = a.data + b.data

    def vjp(g):
        return _unbroadcast(g, a.data.shape), _unbroadcast(g, b.data.shape)

    return _from_op(data, (a, b), vjp)


def sub(a: Tensor, b: Tensor) -> Tensor:
    data = a.data - b.data

    def vjp(g):
        return _unbroadcast(g, a.data.shape), -_unbroadcast(g, b.data.shape)

    return _from_op(data, (a, b), vjp)


def mul(a: Tensor, b: Tensor) -> Tensor:
    data = a.data * b.data

    def vjp(g):
        return (
            _unbroadcast(g * b.data, a.data.shape),
            _unbroadcast(g * a.data, b.data.shape),
        )

    return _from_op(data, (a, b), vjp)


def gelu(x: Tensor) -> Tensor:
    """Gaussian error linear unit, tanh approximation."""
    u = _GELU_C * (x.data + _GELU_A * x.data**3)
    t = np.tanh(u)
    data = 0.5 * x.data * (1.0 + t)

    def vjp(g):
        du = _GELU_C * (1.0 + 3.0 * _GELU_A * x.data**2)
        return (g * (0.5 * (1.0 + t) + 0.5 * x.data * (1.0 - t**2) * du),)

    return _from_op(data, (x,), vjp)


# ---------------------------------------------------------------------------
# linear algebra
# ---------------------------------------------------------------------------


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.ndim != 2 or b.ndim != 2:
        raise ContractError(f"matmul expects 2-D operands, got {a.shape} @ {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ContractError(f"matmul shape mismatch: {a.shape} @ {b.shape}")
    data = a.data @ b.data

    def vjp(g):
        return g @ b.data.T, a.data.T @ g

    return _from_op(data, (a, b), vjp)


def matvec(a: Tensor, x: Tensor) -> Tensor:
    """(n, d) @ (d,) -> (n,)."""
    if a.ndim != 2 or x.ndim != 1 or a.shape[1] != x.shape[0]:
        raise ContractError(f"matvec shape mismatch: {a.shape} @ {x.shape}")
    data = a.data @ x.data

    def vjp(g):
        return np.outer(g, x.data), a.data.T @ g

    return _from_op(data, (a, x), vjp)


def transpose(a: Tensor) -> Tensor:
    if a.ndim != 2:
        raise ContractError(f"transpose expects a 2-D tensor, got {a.shape}")

    def vjp(g):
        return (g.T.copy(),)

    return _from_op(a.data.T.copy(), (a,), vjp)


# ---------------------------------------------------------------------------
# reductions and reshaping
# ---------------------------------------------------------------------------


def sum_all(a: Tensor) -> Tensor:
    def vjp(g):
        return (np.full_like(a.data, float(g.reshape(()))),)

    return _from_op(np.asarray(a.data.sum()), (a,), vjp)


def mean_all(a: Tensor) -> Tensor:
    return mul(sum_all(a), _coerce(1.0 / a.size))


def stack_rows(vectors: Sequence[Tensor]) -> Tensor:
    """Stack 1-D tensors of equal length into an (n, d) matrix."""
    if not vectors:
        raise ContractError("stack_rows of an empty sequence")
    if any(v.ndim != 1 or v.shape != vectors[0].shape for v in vectors):
        raise ContractError("stack_rows expects equal-length 1-D tensors")
    data = np.stack([v.data for v in vectors], axis=0)

    def vjp(g):
        return tuple(g[i].copy() for i in range(len(vectors)))

    return _from_op(data, tuple(vectors), vjp)


def concat_vec(vectors: Sequence[Tensor]) -> Tensor:
    """Concatenate 1-D tensors end to end."""
    if not vectors:
        raise ContractError("concat_vec of an empty sequence")
    if any(v.ndim != 1 for v in vectors):
        raise ContractError("concat_vec expects 1-D tensors")
    data = np.concatenate([v.data for v in vectors])
    offsets = np.cumsum([0] + [v.size for v in vectors])

    def vjp(g):
        return tuple(g[offsets[i] : offsets[i + 1]].copy() for i in range(len(vectors)))

    return _from_op(data, tuple(vectors), vjp)


def concat_cols(mats: Sequence[Tensor]) -> Tensor:
    """Concatenate (n, d_i) tensors along the last axis."""
    if not mats:
        raise ContractError("concat_cols of an empty sequence")
    if any(m.ndim != 2 or m.shape[0] != mats[0].shape[0] for m in mats):
        raise ContractError("concat_cols expects 2-D tensors with equal row counts")
    data = np.concatenate([m.data for m in mats], axis=1)
    offsets = np.cumsum([0] + [m.shape[1] for m in mats])

    def vjp(g):
        return tuple(g[:, offsets[i] : offsets[i + 1]].copy() for i in range(len(mats)))

    return _from_op(data, tuple(mats), vjp)


def slice_cols(a: Tensor, start: int, stop: int) -> Tensor:
    if a.ndim != 2 or not (0 <= start < stop <= a.shape[1]):
        raise ContractError(f"slice_cols({start}, {stop}) on shape {a.shape}")

    def vjp(g):
        full = np.zeros_like(a.data)
        full[:, start:stop] = g
        return (full,)

    return _from_op(a.data[:, start:stop].copy(), (a,), vjp)


def masked_sum_rows(x: Tensor, mask: Array) -> Tensor:
    """Sum the rows of (n, d) ``x`` whose mask entry is true -> (d,)."""
    valid = _check_mask(mask, x.shape[0])
    data = x.data[valid].sum(axis=0) if valid.any() else np.zeros(x.shape[1])

    def vjp(g):
        full = np.zeros_like(x.data)
        full[valid] = g
        return (full,)

    return _from_op(data, (x,), vjp)


def rows_l2_normalized(x: Tensor) -> Tensor:
    """Scale each row of (n, d) ``x`` to unit Euclidean norm."""
    if x.ndim != 2:
        raise ContractError(f"rows_l2_normalized expects 2-D input, got {x.shape}")
    norms = np.linalg.norm(x.data, axis=1, keepdims=True)
    if (norms < 1e-12).any():
        raise NumericError("rows_l2_normalized: row with near-zero norm")
    y = x.data / norms

    def vjp(g):
        # d(x/|x|) = (g - y <g, y>) / |x| per row
        return ((g - y * (g * y).sum(axis=1, keepdims=True)) / norms,)

    return _from_op(y, (x,), vjp)


# ---------------------------------------------------------------------------
# masked softmax family
# ---------------------------------------------------------------------------


def _check_mask(mask, extent: int) -> Array:
    valid = np.asarray(mask, dtype=bool)
    if valid.ndim != 1 or valid.shape[0] != extent:
        raise ContractError(f"mask of shape {valid.shape} does not match extent {extent}")
    return valid


def _broadcast_mask(mask, shape: tuple[int, ...], axis: int) -> Array:
    valid = np.asarray(mask, dtype=bool)
    if valid.shape == shape:
        return valid
    if valid.ndim == 1 and valid.shape[0] == shape[axis]:
        expand = [1] * len(shape)
        expand[axis] = shape[axis]
        return np.broadcast_to(valid.reshape(expand), shape).copy()
    raise ContractError(f"mask of shape {valid.shape} does not fit logits {shape} on axis {axis}")


def _masked_softmax_parts(logits: Tensor, mask, axis: int):
    if not (-logits.ndim <= axis < logits.ndim):
        raise ContractError(f"axis {axis} out of range for shape {logits.shape}")
    axis = axis % logits.ndim
    if np.isnan(logits.data).any():
        raise NumericError("masked_softmax: NaN in input logits")
    valid = _broadcast_mask(mask, logits.shape, axis)
    if not valid.any(axis=axis).all():
        raise AllMaskedError("masked_softmax: a slice has no valid entries")
    # max-subtraction over valid entries only; invalid entries never contribute
    m = np.where(valid, logits.data, -np.inf).max(axis=axis, keepdims=True)
    shifted = np.where(valid, logits.data - m, 0.0)
    e = np.where(valid, np.exp(shifted), 0.0)
    s = e.sum(axis=axis, keepdims=True)
    return valid, m, e, s, axis


def masked_softmax(logits: Tensor, mask, axis: int = -1) -> Tensor:
    """Softmax over the valid entries along ``axis``; invalid entries are 0.

    ``mask`` is a boolean array, either shaped like ``logits`` or a vector
    matching the extent along ``axis`` (broadcast over the other axes).
    """
    valid, _, e, s, axis = _masked_softmax_parts(logits, mask, axis)
    p = e / s

    def vjp(g):
        return (p * (g - (g * p).sum(axis=axis, keepdims=True)),)

    return _from_op(p, (logits,), vjp)


def masked_log_softmax(logits: Tensor, mask, axis: int = -1) -> Tensor:
    """Log of ``masked_softmax``; invalid entries are exactly 0 (excluded)."""
    valid, m, e, s, axis = _masked_softmax_parts(logits, mask, axis)
    data = np.where(valid, logits.data - m - np.log(s), 0.0)
    p = e / s

    def vjp(g):
        gm = np.where(valid, g, 0.0)
        return (gm - p * gm.sum(axis=axis, keepdims=True),)

    return _from_op(data, (logits,), vjp)


# ---------------------------------------------------------------------------
# layer normalization
# ---------------------------------------------------------------------------


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    """Standardize the last axis to mean 0 / variance 1, then apply affine."""
    if eps <= 0:
        raise ContractError("layer_norm: eps must be positive")
    d = x.shape[-1]
    if gain.shape != (d,) or bias.shape != (d,):
        raise ContractError(f"layer_norm: gain/bias must have shape ({d},)")
    mu = x.data.mean(axis=-1, keepdims=True)
    var = x.data.var(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mu) * inv
    data = xhat * gain.data + bias.data

    def vjp(g):
        dxhat = g * gain.data
        dx = inv * (
            dxhat
            - dxhat.mean(axis=-1, keepdims=True)
            - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True)
        )
        lead = tuple(range(x.ndim - 1))
        dgain = (g * xhat).sum(axis=lead) if lead else g * xhat
        dbias = g.sum(axis=lead) if lead else g.copy()
        return dx, dgain, dbias

    return _from_op(data, (x, gain, bias), vjp)


# ---------------------------------------------------------------------------
# backward pass
# ---------------------------------------------------------------------------


def backward(loss: Tensor) -> None:
    """Populate ``grad`` on every reachable tensor with dloss/dtensor.

    Gradients of reachable tensors are reset before accumulation, so after
    the call each ``grad`` equals the exact reverse-mode derivative of this
    loss. The recorded tape is freed: a graph supports one backward pass.
    """
    if loss.data.size != 1:
        raise ContractError(f"backward requires a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        return

    topo: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(loss, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            topo.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))

    for node in topo:
        node.grad = np.zeros_like(node.data)
    loss.grad = np.ones_like(loss.data)

    for node in reversed(topo):
        if node._vjp is None:
            continue
        grads = node._vjp(node.grad)
        for parent, g in zip(node._parents, grads):
            if g is None or not parent.requires_grad:
                continue
            parent.grad += g
        node._parents = ()
        node._vjp = None
        node.grad = None  # intermediates do not keep gradients
