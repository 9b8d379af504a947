"""Dense float32 tensors with tape-based reverse-mode differentiation.

Data lives in float32. Reduction accumulators in softmax, layer_norm, sum and
mean run in float64 before rounding back; matmul uses BLAS sgemm (float32
accumulation), which profiling showed is the difference between a CPU
training run fitting its budget or not, at contraction depths (<= a few
thousand) where float32 drift is harmless. Execution is deterministic:
kernels are plain numpy calls with a fixed reduction order. The tape is freed
as part of backward(), and backward skips gradients for parents that do not
require them (frozen weights cost nothing).
"""

from __future__ import annotations

import numpy as np

from ..errors import NumericalError, ShapeError

_GRAD_ENABLED = True


class no_grad:
    """Context manager disabling tape construction (inference paths)."""

    def __enter__(self):
        global _GRAD_ENABLED
        self._prev = _GRAD_ENABLED
        _GRAD_ENABLED = False
        return self

    def __exit__(self, *exc):
        global _GRAD_ENABLED
        _GRAD_ENABLED = self._prev
        return False


def grad_enabled() -> bool:
    return _GRAD_ENABLED


class Tensor:
    """A flat float32 array with shape, an optional grad, and tape hooks."""

    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward", "name")

    def __init__(self, data, requires_grad: bool = False, name: str = ""):
        arr = np.asarray(data, dtype=np.float32)
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self._parents = ()
        self._backward = None
        self.name = name

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

    def numpy(self) -> np.ndarray:
        return self.data

    def detach(self) -> "Tensor":
        return Tensor(self.data, requires_grad=False, name=self.name)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self):
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad}{tag})"

    # operator sugar; scalars are wrapped as constant tensors
    def __add__(self, other):
        return add(self, _wrap(other))

    def __radd__(self, other):
        return add(_wrap(other), self)

    def __sub__(self, other):
        return sub(self, _wrap(other))

    def __rsub__(self, other):
        return sub(_wrap(other), self)

    def __mul__(self, other):
        return mul(self, _wrap(other))

    def __rmul__(self, other):
        return mul(_wrap(other), self)

    def __truediv__(self, other):
        return div(self, _wrap(other))

    def __neg__(self):
        return mul(self, _wrap(-1.0))

    def __matmul__(self, other):
        return matmul(self, other)

    def reshape(self, *shape):
        return reshape(self, shape[0] if len(shape) == 1 and isinstance(shape[0], (tuple, list)) else shape)

    def transpose(self, axes):
        return transpose(self, axes)

    def sum(self, axis=None, keepdims=False):
        return sum_(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean_(self, axis=axis, keepdims=keepdims)


def _wrap(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=np.float32))


def _node(data: np.ndarray, parents, backward_fn, name: str) -> Tensor:
    out = Tensor(data)
    if _GRAD_ENABLED and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward_fn
        out.name = name
    return out


def _accum(t: Tensor, g: np.ndarray) -> None:
    # grads are never mutated in place, so storing views is safe
    if not t.requires_grad:
        return
    g = g.astype(np.float32, copy=False)
    t.grad = g if t.grad is None else t.grad + g


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum gradient over axes introduced or stretched by broadcasting."""
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, (gs, s) in enumerate(zip(g.shape, shape)) if s == 1 and gs != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


def _check_broadcast(a: Tensor, b: Tensor, op: str) -> None:
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"{op}: shapes {a.shape} and {b.shape} do not broadcast") from None


# ---------------------------------------------------------------------------
# elementwise ops
# ---------------------------------------------------------------------------

def add(a: Tensor, b: Tensor) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    _check_broadcast(a, b, "add")
    out_data = a.data + b.data

    def backward(g):
        if a.requires_grad:
            _accum(a, _unbroadcast(g, a.shape))
        if b.requires_grad:
            _accum(b, _unbroadcast(g, b.shape))

    return _node(out_data, (a, b), backward, "add")


def sub(a: Tensor, b: Tensor) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    _check_broadcast(a, b, "sub")
    out_data = a.data - b.data

    def backward(g):
        if a.requires_grad:
            _accum(a, _unbroadcast(g, a.shape))
        if b.requires_grad:
            _accum(b, _unbroadcast(-g, b.shape))

    return _node(out_data, (a, b), backward, "sub")


def mul(a: Tensor, b: Tensor) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    _check_broadcast(a, b, "mul")
    out_data = a.data * b.data

    def backward(g):
        if a.requires_grad:
            _accum(a, _unbroadcast(g * b.data, a.shape))
        if b.requires_grad:
            _accum(b, _unbroadcast(g * a.data, b.shape))

    return _node(out_data, (a, b), backward, "mul")


def div(a: Tensor, b: Tensor) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    _check_broadcast(a, b, "div")
    out_data = a.data / b.data

    def backward(g):
        if a.requires_grad:
            _accum(a, _unbroadcast(g / b.data, a.shape))
        if b.requires_grad:
            _accum(b, _unbroadcast(-g * a.data / (b.data * b.data), b.shape))

    return _node(out_data, (a, b), backward, "div")


def gelu(x: Tensor) -> Tensor:
    """tanh-approximation GELU."""
    c = np.float32(0.7978845608028654)  # sqrt(2/pi)
    a = np.float32(0.044715)
    xd = x.data
    x2 = xd * xd
    th = np.tanh(c * (xd + a * (x2 * xd)))
    out_data = np.float32(0.5) * xd * (np.float32(1.0) + th)

    def backward(g):
        sech2 = np.float32(1.0) - th * th
        local = np.float32(0.5) * (np.float32(1.0) + th) \
            + np.float32(0.5) * xd * sech2 * c * (np.float32(1.0) + np.float32(3.0) * a * x2)
        _accum(x, g * local)

    return _node(out_data, (x,), backward, "gelu")


# ---------------------------------------------------------------------------
# matmul / reductions
# ---------------------------------------------------------------------------

def matmul(a: Tensor, b: Tensor) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    if a.ndim < 1 or b.ndim < 2:
        raise ShapeError(f"matmul: operands must be >=1D/2D, got {a.shape} @ {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul: inner dims differ, {a.shape} @ {b.shape}")
    out_data = np.matmul(a.data, b.data)

    def backward(g):
        if a.requires_grad:
            ga = np.matmul(g, np.swapaxes(b.data, -1, -2))
            _accum(a, _unbroadcast(ga, a.shape))
        if b.requires_grad:
            gb = np.matmul(np.swapaxes(a.data, -1, -2), g)
            _accum(b, _unbroadcast(gb, b.shape))

    return _node(out_data, (a, b), backward, "matmul")


def _norm_axes(axis, ndim: int) -> tuple[int, ...]:
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(sorted(a % ndim for a in axis))


def sum_(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    axes = _norm_axes(axis, x.ndim)
    out_data = x.data.sum(axis=axes, keepdims=keepdims, dtype=np.float64).astype(np.float32)

    def backward(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        _accum(x, np.broadcast_to(g, x.shape))

    return _node(out_data, (x,), backward, "sum")


def mean_(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    axes = _norm_axes(axis, x.ndim)
    n = int(np.prod([x.shape[a] for a in axes]))
    out_data = x.data.mean(axis=axes, keepdims=keepdims, dtype=np.float64).astype(np.float32)

    def backward(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        _accum(x, np.broadcast_to(g / n, x.shape))

    return _node(out_data, (x,), backward, "mean")


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    # float32 exp, float64 accumulator for the normalizing sum
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    denom = e.sum(axis=axis, keepdims=True, dtype=np.float64).astype(np.float32)
    e /= denom
    y = e

    def backward(g):
        dot = (g * y).sum(axis=axis, keepdims=True, dtype=np.float64)
        _accum(x, y * (g - dot.astype(np.float32)))

    return _node(y, (x,), backward, "softmax")


def layer_norm(x: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize the last axis to zero mean / unit variance (no affine).

    Moment reductions accumulate in float64.
    """
    xd = x.data
    mu = xd.mean(axis=-1, keepdims=True, dtype=np.float64).astype(np.float32)
    xc = xd - mu
    var = (xc * xc).mean(axis=-1, keepdims=True, dtype=np.float64)
    inv = (1.0 / np.sqrt(var + eps)).astype(np.float32)
    y = xc * inv

    def backward(g):
        gm = g.mean(axis=-1, keepdims=True, dtype=np.float64).astype(np.float32)
        gym = (g * y).mean(axis=-1, keepdims=True, dtype=np.float64).astype(np.float32)
        _accum(x, inv * (g - gm - y * gym))

    return _node(y, (x,), backward, "layer_norm")


# ---------------------------------------------------------------------------
# shape ops
# ---------------------------------------------------------------------------

def reshape(x: Tensor, shape) -> Tensor:
    shape = tuple(shape)
    try:
        out_data = x.data.reshape(shape)
    except ValueError:
        raise ShapeError(f"reshape: cannot view {x.shape} as {shape}") from None

    def backward(g):
        _accum(x, g.reshape(x.shape))

    return _node(out_data, (x,), backward, "reshape")


def transpose(x: Tensor, axes) -> Tensor:
    axes = tuple(axes)
    out_data = np.transpose(x.data, axes)
    inv = tuple(np.argsort(axes))

    def backward(g):
        _accum(x, np.transpose(g, inv))

    return _node(out_data, (x,), backward, "transpose")


def concat(tensors, axis: int = -1) -> Tensor:
    tensors = [_wrap(t) for t in tensors]
    base = list(tensors[0].shape)
    ax = axis % len(base)
    for t in tensors[1:]:
        other = list(t.shape)
        if len(other) != len(base) or any(o != b for i, (o, b) in enumerate(zip(other, base)) if i != ax):
            raise ShapeError(
                f"concat: shapes {tensors[0].shape} and {t.shape} differ off axis {axis}")
    out_data = np.concatenate([t.data for t in tensors], axis=ax)
    sizes = [t.shape[ax] for t in tensors]

    def backward(g):
        offset = 0
        for t, s in zip(tensors, sizes):
            idx = [slice(None)] * g.ndim
            idx[ax] = slice(offset, offset + s)
            _accum(t, g[tuple(idx)])
            offset += s

    return _node(out_data, tuple(tensors), backward, "concat")


def concat_channel(a: Tensor, b: Tensor) -> Tensor:
    """Concatenate along the trailing channel axis."""
    return concat([a, b], axis=-1)


def slice_axis(x: Tensor, axis: int, start: int, stop: int) -> Tensor:
    ax = axis % x.ndim
    if not (0 <= start <= stop <= x.shape[ax]):
        raise ShapeError(f"slice: [{start}:{stop}] out of range for axis {axis} of {x.shape}")
    idx = [slice(None)] * x.ndim
    idx[ax] = slice(start, stop)
    idx = tuple(idx)
    out_data = x.data[idx]

    def backward(g):
        full = np.zeros(x.shape, dtype=np.float32)
        full[idx] = g
        _accum(x, full)

    return _node(out_data, (x,), backward, "slice")


def split(x: Tensor, n_parts: int, axis: int = -1):
    ax = axis % x.ndim
    total = x.shape[ax]
    if total % n_parts != 0:
        raise ShapeError(f"split: axis {axis} size {total} not divisible by {n_parts}")
    step = total // n_parts
    return tuple(slice_axis(x, ax, i * step, (i + 1) * step) for i in range(n_parts))


def embedding(table: Tensor, idx: np.ndarray) -> Tensor:
    """Row gather; gradient scatter-adds into the table."""
    idx = np.asarray(idx, dtype=np.int64)
    out_data = table.data[idx]

    def backward(g):
        full = np.zeros(table.shape, dtype=np.float32)
        np.add.at(full, idx, g)
        _accum(table, full)

    return _node(out_data, (table,), backward, "embedding")


# ---------------------------------------------------------------------------
# backward driver
# ---------------------------------------------------------------------------

def backward(loss: Tensor) -> None:
    """Reverse sweep from a scalar loss; frees the tape afterwards."""
    if loss.size != 1:
        raise ShapeError(f"backward: loss must be scalar, got shape {loss.shape}")
    if not np.isfinite(loss.data).all():
        raise NumericalError("backward: loss is not finite")

    order: list[Tensor] = []
    seen = set()
    stack = [(loss, False)]
    while stack:
        node, processed = stack.pop()
        if processed:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))

    loss.grad = np.ones_like(loss.data)
    for node in reversed(order):
        if node._backward is not None and node.grad is not None:
            node._backward(node.grad)
        # free the tape and intermediate grads
        if node._backward is not None:
            node._parents = ()
            node._backward = None
            if node is not loss:
                node.grad = None


def assert_finite(arr: np.ndarray, what: str) -> None:
    if not np.isfinite(arr).all():
        bad = int(np.size(arr) - np.isfinite(arr).sum())
        raise NumericalError(f"{what}: {bad} non-finite values (shape {arr.shape})")
