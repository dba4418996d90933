"""
Dense tensors with reverse-mode gradients.

Graphs are built on the fly by every operation (define-by-run) and walked
once by `backward`. Leaf tensors created with requires_grad=True accumulate
gradients into `.grad` until `zero_grad` is called.

Precision defaults to float32; `precision(np.float64)` switches the dtype of
newly created tensors, which the finite-difference checker relies on.
"""

import math
import threading
from contextlib import contextmanager
from typing import Callable, Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np

from src.utils.error_handling import ContractError, DimensionError, NumericError

# tanh approximation of GELU: 0.5·x·(1 + tanh(√(2/π)·(x + 0.044715·x³)))
GELU_SQRT_2_OVER_PI = math.sqrt(2.0 / math.pi)
GELU_CUBIC = 0.044715

_default_dtype = np.dtype(np.float32)
_grad_state = threading.local()

ArrayLike = Union["Tensor", np.ndarray, float, int, Sequence]
BackwardFn = Callable[[np.ndarray], Tuple[Optional[np.ndarray], ...]]


def get_default_dtype() -> np.dtype:
    return _default_dtype


def set_default_dtype(dtype) -> None:
    global _default_dtype
    dtype = np.dtype(dtype)
    if dtype not in (np.dtype(np.float32), np.dtype(np.float64)):
        raise ContractError(f"unsupported dtype {dtype}; use float32 or float64")
    _default_dtype = dtype


@contextmanager
def precision(dtype):
    """Temporarily change the dtype of newly created tensors (process wide)."""
    previous = _default_dtype
    set_default_dtype(dtype)
    try:
        yield
    finally:
        set_default_dtype(previous)


def is_grad_enabled() -> bool:
    return getattr(_grad_state, 'enabled', True)


@contextmanager
def no_grad():
    """Skip graph recording in the current thread."""
    previous = is_grad_enabled()
    _grad_state.enabled = False
    try:
        yield
    finally:
        _grad_state.enabled = previous


class Tensor:
    """A dense array plus the record needed to differentiate through it."""

    def __init__(self, data: ArrayLike, requires_grad: bool = False, dtype=None, name: Optional[str] = None):
        if isinstance(data, Tensor):
            data = data.data
        self.data = np.array(data, dtype=dtype or _default_dtype)
        self.requires_grad = bool(requires_grad)
        self.grad: Optional[np.ndarray] = None
        self.name = name
        self.op: Optional[str] = None
        self._parents: Tuple["Tensor", ...] = ()
        self._backward: Optional[BackwardFn] = None

    @classmethod
    def _from_op(cls, op: str, data: np.ndarray, parents: Sequence["Tensor"], backward: BackwardFn) -> "Tensor":
        if not np.all(np.isfinite(data)):
            raise NumericError(f"{op} produced non-finite values")
        out = cls.__new__(cls)
        out.data = data
        out.grad = None
        out.name = None
        out.op = op
        out.requires_grad = is_grad_enabled() and any(p.requires_grad for p in parents)
        if out.requires_grad:
            out._parents = tuple(parents)
            out._backward = backward
        else:
            out._parents = ()
            out._backward = None
        return out

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.data.shape

    @property
    def dtype(self) -> np.dtype:
        return self.data.dtype

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def is_leaf(self) -> bool:
        return self._backward is None

    @property
    def T(self) -> "Tensor":
        return transpose(self)

    def item(self) -> float:
        if self.data.size != 1:
            raise ContractError(f"item() needs a single element, shape is {self.shape}")
        return float(self.data.reshape(()))

    def numpy(self) -> np.ndarray:
        return self.data

    def zero_grad(self) -> None:
        self.grad = np.zeros_like(self.data)

    def backward(self) -> None:
        backward(self)

    def __repr__(self):
        label = f", name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}, requires_grad={self.requires_grad}{label})"

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

    def __truediv__(self, other):
        return div(self, other)

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, key):
        return getitem(self, key)

    def sum(self, axis=None, keepdims: bool = False) -> "Tensor":
        return tensor_sum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims: bool = False) -> "Tensor":
        return mean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape) -> "Tensor":
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)


def as_tensor(value: ArrayLike, like: Optional[Tensor] = None) -> Tensor:
    if isinstance(value, Tensor):
        return value
    dtype = like.dtype if like is not None else None
    if isinstance(value, np.ndarray) and np.issubdtype(value.dtype, np.floating) and dtype is None:
        dtype = value.dtype
    return Tensor(value, dtype=dtype)


def _pair(a: ArrayLike, b: ArrayLike) -> Tuple[Tensor, Tensor]:
    if isinstance(a, Tensor):
        return a, as_tensor(b, like=a)
    b = as_tensor(b)
    return as_tensor(a, like=b), b


def _unbroadcast(grad: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
    """Sum a broadcast gradient back down to `shape`."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad.reshape(shape)


def _broadcast_shape(op: str, a: Tensor, b: Tensor) -> None:
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise DimensionError(f"{op}: shapes {a.shape} and {b.shape} do not broadcast")


def add(a: ArrayLike, b: ArrayLike) -> Tensor:
    a, b = _pair(a, b)
    _broadcast_shape("add", a, b)

    def _backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return Tensor._from_op("add", a.data + b.data, (a, b), _backward)


def sub(a: ArrayLike, b: ArrayLike) -> Tensor:
    a, b = _pair(a, b)
    _broadcast_shape("sub", a, b)

    def _backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return Tensor._from_op("sub", a.data - b.data, (a, b), _backward)


def mul(a: ArrayLike, b: ArrayLike) -> Tensor:
    a, b = _pair(a, b)
    _broadcast_shape("mul", a, b)

    def _backward(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return Tensor._from_op("mul", a.data * b.data, (a, b), _backward)


def div(a: ArrayLike, b: ArrayLike) -> Tensor:
    a, b = _pair(a, b)
    _broadcast_shape("div", a, b)
    if np.any(b.data == 0):
        raise NumericError("div: division by zero")

    def _backward(g):
        return (_unbroadcast(g / b.data, a.shape),
                _unbroadcast(-g * a.data / (b.data * b.data), b.shape))

    return Tensor._from_op("div", a.data / b.data, (a, b), _backward)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product of two 2-D tensors; dA = dC·Bᵀ, dB = Aᵀ·dC."""
    a, b = _pair(a, b)
    if a.ndim != 2 or b.ndim != 2:
        raise DimensionError(f"matmul expects 2-D operands, got {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul inner dimensions differ: {a.shape} @ {b.shape}")

    def _backward(g):
        return g @ b.data.T, a.data.T @ g

    return Tensor._from_op("matmul", a.data @ b.data, (a, b), _backward)


def tensor_sum(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    x = as_tensor(x)

    def _backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, x.shape).copy(),)

    return Tensor._from_op("sum", np.asarray(x.data.sum(axis=axis, keepdims=keepdims)), (x,), _backward)


def mean(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    x = as_tensor(x)
    count = x.data.size if axis is None else int(np.prod([x.shape[a] for a in np.atleast_1d(axis)]))
    return mul(tensor_sum(x, axis=axis, keepdims=keepdims), 1.0 / count)


def reshape(x: Tensor, shape: Tuple[int, ...]) -> Tensor:
    try:
        data = x.data.reshape(shape)
    except ValueError:
        raise DimensionError(f"cannot reshape {x.shape} into {shape}")

    def _backward(g):
        return (g.reshape(x.shape),)

    return Tensor._from_op("reshape", data, (x,), _backward)


def transpose(x: Tensor) -> Tensor:
    if x.ndim != 2:
        raise DimensionError(f"transpose expects a 2-D tensor, got {x.shape}")

    def _backward(g):
        return (g.T,)

    return Tensor._from_op("transpose", np.ascontiguousarray(x.data.T), (x,), _backward)


def getitem(x: Tensor, key) -> Tensor:
    """Indexing with slices or integer arrays; repeated indices accumulate."""
    data = np.array(x.data[key])

    def _backward(g):
        full = np.zeros_like(x.data)
        np.add.at(full, key, g)
        return (full,)

    return Tensor._from_op("getitem", data, (x,), _backward)


def concat(tensors: Sequence[Tensor], axis: int = -1) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    try:
        data = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError as e:
        raise DimensionError(f"concat: {e}")
    sizes = [t.shape[axis] for t in tensors]
    bounds = np.cumsum([0] + sizes)

    def _backward(g):
        return tuple(
            np.take(g, np.arange(bounds[i], bounds[i + 1]), axis=axis)
            for i in range(len(tensors))
        )

    return Tensor._from_op("concat", data, tuple(tensors), _backward)


def take_along_rows(scores: Tensor, index: np.ndarray) -> Tensor:
    """out[i, j] = scores[i, index[i, j]] for a 2-D integer index."""
    if scores.ndim != 2 or index.ndim != 2 or index.shape[0] != scores.shape[0]:
        raise DimensionError(f"take_along_rows: scores {scores.shape} vs index {index.shape}")
    if index.size and (index.min() < 0 or index.max() >= scores.shape[1]):
        raise ContractError("take_along_rows: index out of range")
    rows, width = scores.shape
    flat = (np.arange(rows)[:, None] * width + index).ravel()

    def _backward(g):
        grad = np.bincount(flat, weights=g.ravel(), minlength=rows * width)
        return (grad.reshape(rows, width).astype(scores.dtype, copy=False),)

    return Tensor._from_op("take_along_rows", np.take_along_axis(scores.data, index, axis=1), (scores,), _backward)


def _require_finite(op: str, x: Tensor) -> None:
    if not np.all(np.isfinite(x.data)):
        raise NumericError(f"{op}: input contains NaN or Inf")


def softmax_rows(x: Tensor) -> Tensor:
    """Softmax over the last axis, with max-subtraction."""
    _require_finite("softmax_rows", x)
    shifted = x.data - x.data.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    s = e / e.sum(axis=-1, keepdims=True)

    def _backward(g):
        return (s * (g - (g * s).sum(axis=-1, keepdims=True)),)

    return Tensor._from_op("softmax_rows", s, (x,), _backward)


def log_softmax_rows(x: Tensor) -> Tensor:
    _require_finite("log_softmax_rows", x)
    shifted = x.data - x.data.max(axis=-1, keepdims=True)
    out = shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))

    def _backward(g):
        return (g - np.exp(out) * g.sum(axis=-1, keepdims=True),)

    return Tensor._from_op("log_softmax_rows", out, (x,), _backward)


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-6) -> Tensor:
    """Normalize the last axis to zero mean and unit variance, then scale and shift."""
    if eps <= 0:
        raise ContractError(f"layer_norm: eps must be positive, got {eps}")
    d = x.shape[-1]
    if gamma.shape != (d,) or beta.shape != (d,):
        raise DimensionError(f"layer_norm: gamma {gamma.shape} / beta {beta.shape} vs feature dim {d}")
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    lead = tuple(range(x.ndim - 1))

    def _backward(g):
        dxhat = g * gamma.data
        dx = inv * (dxhat - dxhat.mean(axis=-1, keepdims=True)
                    - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True))
        return dx, (g * xhat).sum(axis=lead), g.sum(axis=lead)

    return Tensor._from_op("layer_norm", xhat * gamma.data + beta.data, (x, gamma, beta), _backward)


def gelu(x: Tensor) -> Tensor:
    """Tanh-approximated GELU."""
    _require_finite("gelu", x)
    v = x.data
    t = np.tanh(GELU_SQRT_2_OVER_PI * (v + GELU_CUBIC * v ** 3))

    def _backward(g):
        du = GELU_SQRT_2_OVER_PI * (1.0 + 3.0 * GELU_CUBIC * v * v)
        return (g * (0.5 * (1.0 + t) + 0.5 * v * (1.0 - t * t) * du),)

    return Tensor._from_op("gelu", 0.5 * v * (1.0 + t), (x,), _backward)


def _topological_order(root: Tensor) -> List[Tensor]:
    order: List[Tensor] = []
    visited = set()
    stack = [(root, False)]
    while stack:
        node, done = stack.pop()
        if done:
            order.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            if parent.requires_grad and id(parent) not in visited:
                stack.append((parent, False))
    return order


def backward(loss: Tensor) -> None:
    """
    Propagate d(loss)/d(leaf) into every reachable leaf with requires_grad.

    Gradients accumulate: calling backward twice without zero_grad adds the
    second gradient to the first.
    """
    if loss.data.size != 1:
        raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        return

    pending = {id(loss): np.ones_like(loss.data)}
    for node in reversed(_topological_order(loss)):
        g = pending.pop(id(node), None)
        if g is None:
            continue
        if node._backward is None:
            g = g.astype(node.dtype, copy=False)
            node.grad = g.copy() if node.grad is None else node.grad + g
            continue
        for parent, parent_grad in zip(node._parents, node._backward(g)):
            if parent_grad is None or not parent.requires_grad:
                continue
            key = id(parent)
            pending[key] = parent_grad if key not in pending else pending[key] + parent_grad


def zero_grad(tensors: Iterable[Tensor]) -> None:
    for t in tensors:
        t.zero_grad()
