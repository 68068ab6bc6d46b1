"""Dense float tensors with taped reverse-mode gradients.

Tensors wrap a numpy array (float32 by default) and record the operations
applied to them so that ``backward`` on a scalar result can fill the ``grad``
buffers of every ancestor that requires gradients. The graph is a per-use
recording: every forward pass builds a fresh tape and nothing is reused
across optimization steps.

Every op validates that its output is finite; NaN or Inf anywhere raises
:class:`NumericsError` immediately rather than propagating silently.
"""

from __future__ import annotations

import math
from typing import Iterable, Optional, Sequence

import numpy as np

from ..errors import DegenerateRowError, NumericsError, ShapeError

DEFAULT_DTYPE = np.float32

_FLOAT_DTYPES = (np.float32, np.float64)


def _check_finite(arr: np.ndarray, op: str) -> None:
    # min/max both propagate NaN and catch +/-inf without a temporary.
    if arr.size and not (np.isfinite(arr.min()) and np.isfinite(arr.max())):
        raise NumericsError(f"non-finite values in output of '{op}'")


class Tensor:
    """A dense n-dimensional float array with optional gradient tracking."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_grad_fn", "_op")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        arr = np.asarray(data, order="C")
        if dtype is not None:
            arr = arr.astype(dtype)
        elif arr.dtype not in _FLOAT_DTYPES:
            arr = arr.astype(DEFAULT_DTYPE)
        if not arr.flags["C_CONTIGUOUS"]:
            arr = np.ascontiguousarray(arr)
        _check_finite(arr, "tensor")
        self.data = arr
        self.grad: Optional[np.ndarray] = None
        self.requires_grad = bool(requires_grad)
        self._parents: tuple = ()
        self._grad_fn = None
        self._op = "leaf"

    # -- introspection -------------------------------------------------

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad}, op={self._op})"

    # -- gradient bookkeeping -------------------------------------------

    def zero_grad(self) -> None:
        self.grad = None

    def detach(self) -> "Tensor":
        """A view of the same data with no history and no gradient."""
        return Tensor(self.data, requires_grad=False)

    def backward(self) -> None:
        """Populate ``grad`` of every requires-grad ancestor of this scalar.

        Repeated calls without resetting grads accumulate; callers that step
        an optimizer must zero parameter grads first.
        """
        if self.ndim != 0:
            raise ShapeError(f"backward requires a scalar loss, got shape {self.shape}")
        order = _topo_order(self)
        pending: dict[int, np.ndarray] = {id(self): np.asarray(1.0, dtype=self.dtype)}
        for node in order:
            g = pending.pop(id(node), None)
            if g is None:
                continue
            if node.requires_grad:
                if node._grad_fn is None:
                    # Leaf: copy so later in-place edits of g cannot alias.
                    node.grad = np.array(g, dtype=node.dtype) if node.grad is None else node.grad + g
                else:
                    node.grad = g if node.grad is None else node.grad + g
            if node._grad_fn is None:
                continue
            for parent, pg in zip(node._parents, node._grad_fn(g)):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                pending[key] = pg if key not in pending else pending[key] + pg

    # -- operator sugar --------------------------------------------------

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return add(neg(self), other)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(self, other)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)


def _topo_order(root: Tensor) -> list:
    """Reverse topological order of the recorded graph, iteratively."""
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if id(p) not in seen:
                stack.append((p, False))
    order.reverse()
    return order


def as_tensor(x, like: Optional[Tensor] = None) -> Tensor:
    """Coerce ``x`` to a constant Tensor, matching ``like``'s dtype for scalars."""
    if isinstance(x, Tensor):
        return x
    dtype = None
    if like is not None and np.isscalar(x):
        dtype = like.dtype
    return Tensor(x, requires_grad=False, dtype=dtype)


def _make(data: np.ndarray, parents: Sequence[Tensor], grad_fn, op: str) -> Tensor:
    _check_finite(data, op)
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out.requires_grad = any(p.requires_grad for p in parents)
    if out.requires_grad:
        out._parents = tuple(parents)
        out._grad_fn = grad_fn
    else:
        out._parents = ()
        out._grad_fn = None
    out._op = op
    return out


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum ``g`` down to ``shape`` to undo numpy broadcasting."""
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


# -- elementwise arithmetic ----------------------------------------------


def add(a, b) -> Tensor:
    a = as_tensor(a)
    b = as_tensor(b, like=a)
    data = a.data + b.data

    def grad_fn(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _make(data, (a, b), grad_fn, "add")


def sub(a, b) -> Tensor:
    a = as_tensor(a)
    b = as_tensor(b, like=a)
    data = a.data - b.data

    def grad_fn(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return _make(data, (a, b), grad_fn, "sub")


def mul(a, b) -> Tensor:
    a = as_tensor(a)
    b = as_tensor(b, like=a)
    data = a.data * b.data

    def grad_fn(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return _make(data, (a, b), grad_fn, "mul")


def neg(a) -> Tensor:
    a = as_tensor(a)

    def grad_fn(g):
        return (-g,)

    return _make(-a.data, (a,), grad_fn, "neg")


# -- shape manipulation ----------------------------------------------------


def reshape(a: Tensor, shape) -> Tensor:
    a = as_tensor(a)
    shape = tuple(shape)
    data = a.data.reshape(shape)

    def grad_fn(g):
        return (g.reshape(a.shape),)

    return _make(data, (a,), grad_fn, "reshape")


def transpose(a: Tensor, axes) -> Tensor:
    a = as_tensor(a)
    axes = tuple(axes)
    inv = tuple(np.argsort(axes))
    data = np.ascontiguousarray(a.data.transpose(axes))

    def grad_fn(g):
        return (np.ascontiguousarray(g.transpose(inv)),)

    return _make(data, (a,), grad_fn, "transpose")


def gather_rows(table: Tensor, idx) -> Tensor:
    """Select rows of a 2-D table by integer index; grads scatter-add back.

    ``idx`` may have any shape; the result has shape ``idx.shape + (D,)``.
    """
    table = as_tensor(table)
    if table.ndim != 2:
        raise ShapeError(f"gather_rows expects a 2-D table, got shape {table.shape}")
    idx = np.asarray(idx)
    if not np.issubdtype(idx.dtype, np.integer):
        raise ShapeError("gather_rows index must be an integer array")
    if idx.size and (idx.min() < 0 or idx.max() >= table.shape[0]):
        raise ShapeError(
            f"gather_rows index out of range [0, {table.shape[0]}): "
            f"min={idx.min()}, max={idx.max()}"
        )
    data = table.data[idx]

    def grad_fn(g):
        gt = np.zeros_like(table.data)
        np.add.at(gt, idx, g)
        return (gt,)

    return _make(data, (table,), grad_fn, "gather_rows")


# -- reductions -------------------------------------------------------------


def sum_all(a: Tensor) -> Tensor:
    a = as_tensor(a)
    data = np.asarray(a.data.sum(), dtype=a.dtype)

    def grad_fn(g):
        return (np.full(a.shape, g, dtype=a.dtype),)

    return _make(data, (a,), grad_fn, "sum_all")


def mean_all(a: Tensor) -> Tensor:
    return mul(sum_all(a), 1.0 / a.size)


def weighted_sum(a: Tensor, weights) -> Tensor:
    """Scalar ``sum(a * weights)`` with constant weights, without the
    intermediate product tensor."""
    a = as_tensor(a)
    w = weights.data if isinstance(weights, Tensor) else np.asarray(weights)
    if w.shape != a.shape:
        raise ShapeError(f"weighted_sum shapes differ: {a.shape} vs {w.shape}")
    data = np.asarray(np.vdot(a.data, w), dtype=a.dtype)

    def grad_fn(g):
        return (g * w,)

    return _make(data, (a,), grad_fn, "weighted_sum")


# -- linear algebra ----------------------------------------------------------


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product over the last two axes, broadcasting leading axes."""
    a = as_tensor(a)
    b = as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError(f"matmul needs >=2-D operands, got {a.shape} x {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul inner dimensions differ: {a.shape} x {b.shape}")

    if b.ndim == 2 and a.ndim > 2:
        # One flat GEMM beats a loop of small batched ones.
        lead = a.shape[:-1]
        k = a.shape[-1]
        a2 = a.data.reshape(-1, k)
        data = (a2 @ b.data).reshape(*lead, b.shape[-1])

        def grad_fn(g):
            g2 = g.reshape(-1, b.shape[-1])
            ga = (g2 @ b.data.T).reshape(a.shape)
            gb = a2.T @ g2
            return ga, gb

        return _make(data, (a, b), grad_fn, "matmul")

    try:
        data = a.data @ b.data
    except ValueError as exc:
        raise ShapeError(f"matmul shapes not broadcastable: {a.shape} x {b.shape}") from exc

    def grad_fn(g):
        ga = g @ b.data.swapaxes(-1, -2)
        gb = a.data.swapaxes(-1, -2) @ g
        return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)

    return _make(data, (a, b), grad_fn, "matmul")


# -- row-wise softmax family --------------------------------------------------


def _masked_max(x: np.ndarray, mask: Optional[np.ndarray]) -> np.ndarray:
    if mask is None:
        return x.max(axis=-1, keepdims=True)
    lowered = np.where(mask, x, -np.inf)
    return lowered.max(axis=-1, keepdims=True)


def _validate_mask(x: np.ndarray, mask) -> Optional[np.ndarray]:
    if mask is None:
        return None
    m = np.asarray(mask, dtype=bool)
    try:
        m = np.broadcast_to(m, x.shape)
    except ValueError as exc:
        raise ShapeError(f"mask shape {m.shape} not broadcastable to {x.shape}") from exc
    if not m.any(axis=-1).all():
        raise DegenerateRowError("softmax row with every entry masked")
    return m


def softmax_rows(x: Tensor, mask=None) -> Tensor:
    """Row-wise softmax over the last axis, restricted to unmasked entries.

    ``mask`` is boolean with True marking valid positions; masked positions
    come out exactly 0. Stabilized by per-row max subtraction.
    """
    x = as_tensor(x)
    m = _validate_mask(x.data, mask)
    z = x.data - _masked_max(x.data, m)
    # exp(-inf) == 0 exactly, so masked entries never enter the sum.
    e = np.exp(z if m is None else np.where(m, z, -np.inf))
    s = e.sum(axis=-1, keepdims=True)
    y = e / s

    def grad_fn(g):
        dot = (g * y).sum(axis=-1, keepdims=True)
        return (y * (g - dot),)

    return _make(y, (x,), grad_fn, "softmax_rows")


def log_softmax_rows(x: Tensor, mask=None) -> Tensor:
    """Row-wise log-softmax over unmasked entries of the last axis.

    Values at masked positions are finite but meaningless; callers must
    weight them by zero.
    """
    x = as_tensor(x)
    m = _validate_mask(x.data, mask)
    z = x.data - _masked_max(x.data, m)
    e = np.exp(z if m is None else np.where(m, z, -np.inf))
    s = e.sum(axis=-1, keepdims=True)
    out = z - np.log(s)
    y = e / s  # softmax, reused in the gradient

    def grad_fn(g):
        return (g - y * g.sum(axis=-1, keepdims=True),)

    return _make(out, (x,), grad_fn, "log_softmax_rows")


# -- normalization -------------------------------------------------------------


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    """Per-vector standardization over the last axis, then affine."""
    x = as_tensor(x)
    gain = as_tensor(gain)
    bias = as_tensor(bias)
    h = x.shape[-1]
    if gain.shape != (h,) or bias.shape != (h,):
        raise ShapeError(
            f"layer_norm affine shapes {gain.shape}/{bias.shape} do not match width {h}"
        )
    mu = x.data.mean(axis=-1, keepdims=True)
    d = x.data - mu
    var = (d * d).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = d * inv
    y = gain.data * xhat + bias.data

    def grad_fn(g):
        gx_hat = g * gain.data
        m1 = gx_hat.mean(axis=-1, keepdims=True)
        m2 = (gx_hat * xhat).mean(axis=-1, keepdims=True)
        gx = inv * (gx_hat - m1 - xhat * m2)
        lead = tuple(range(x.ndim - 1))
        ggain = (g * xhat).sum(axis=lead)
        gbias = g.sum(axis=lead)
        return gx, ggain, gbias

    return _make(y, (x, gain, bias), grad_fn, "layer_norm")


# -- activations -----------------------------------------------------------------

_GELU_C = math.sqrt(2.0 / math.pi)
_GELU_K = 0.044715


def _gelu_forward(x: np.ndarray) -> np.ndarray:
    u = _GELU_C * (x + _GELU_K * x * x * x)
    return 0.5 * x * (1.0 + np.tanh(u))


def _gelu_deriv(x: np.ndarray) -> np.ndarray:
    u = _GELU_C * (x + _GELU_K * x * x * x)
    t = np.tanh(u)
    du = _GELU_C * (1.0 + 3.0 * _GELU_K * x * x)
    return 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du


def gelu(x: Tensor) -> Tensor:
    """Elementwise GELU using the tanh approximation."""
    x = as_tensor(x)
    data = _gelu_forward(x.data)

    def grad_fn(g):
        return (g * _gelu_deriv(x.data),)

    return _make(data, (x,), grad_fn, "gelu")


def geglu(x: Tensor) -> Tensor:
    """Gated GELU: split the last axis into (value, gate) halves.

    Returns value * gelu(gate), halving the last dimension.
    """
    x = as_tensor(x)
    w = x.shape[-1]
    if w % 2 != 0:
        raise ShapeError(f"geglu needs an even last dimension, got {w}")
    h = w // 2
    v = x.data[..., :h]
    gate = x.data[..., h:]
    data = v * _gelu_forward(gate)

    def grad_fn(g):
        gx = np.empty_like(x.data)
        gx[..., :h] = g * _gelu_forward(gate)
        gx[..., h:] = g * v * _gelu_deriv(gate)
        return (gx,)

    return _make(data, (x,), grad_fn, "geglu")


# -- regularization ------------------------------------------------------------------


def dropout(x: Tensor, p: float, rng: Optional[np.random.Generator], train: bool) -> Tensor:
    """Inverted dropout; identity when not training or p == 0."""
    if not train or p == 0.0:
        return x
    if not 0.0 <= p < 1.0:
        raise ShapeError(f"dropout probability must be in [0, 1), got {p}")
    if rng is None:
        raise ValueError("dropout in train mode requires an explicit rng")
    x = as_tensor(x)
    keep = (rng.random(x.shape) >= p).astype(x.dtype) / (1.0 - p)
    data = x.data * keep

    def grad_fn(g):
        return (g * keep,)

    return _make(data, (x,), grad_fn, "dropout")


def zero_grads(params: Iterable[Tensor]) -> None:
    """Reset the grad buffer of every tensor in ``params``."""
    for p in params:
        p.zero_grad()
