"""Dense arrays with reverse-mode differentiation.

Every differentiable operation returns a new :class:`Array` that remembers its
parents and a closure mapping the output gradient to one gradient per parent.
Arrays are numbered in creation order, so sorting the nodes reachable from a
loss by that number yields a valid topological (execution) order.
"""

from __future__ import annotations

import contextlib
import itertools
import threading
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np

from ..errors import ContractError, NumericalError, ShapeError

_ids = itertools.count()
_state = threading.local()

BackwardFn = Callable[[np.ndarray], Sequence["np.ndarray | None"]]


def _get(name, default):
    return getattr(_state, name, default)


def grad_enabled() -> bool:
    return _get("grad_enabled", True)


def default_dtype() -> np.dtype:
    return _get("dtype", np.dtype(np.float32))


def set_default_dtype(dtype) -> None:
    dtype = np.dtype(dtype)
    if dtype not in (np.float32, np.float64):
        raise ValueError(f"unsupported dtype {dtype}")
    _state.dtype = dtype


@contextlib.contextmanager
def no_grad():
    """Disable graph recording inside the block (evaluation mode)."""
    prev = grad_enabled()
    _state.grad_enabled = False
    try:
        yield
    finally:
        _state.grad_enabled = prev


@contextlib.contextmanager
def precision(dtype):
    """Temporarily switch the dtype used for newly created arrays."""
    prev = default_dtype()
    set_default_dtype(dtype)
    try:
        yield
    finally:
        _state.dtype = prev


@contextlib.contextmanager
def finite_checks(enabled: bool):
    prev = _get("check_finite", True)
    _state.check_finite = enabled
    try:
        yield
    finally:
        _state.check_finite = prev


class Array:
    """Shaped floating-point data with an optional gradient."""

    __slots__ = ("data", "requires_grad", "grad", "op", "_parents", "_backward", "_id")
    __array_priority__ = 100  # make ndarray <op> Array dispatch to Array

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        if isinstance(data, Array):
            data = data.data
        arr = np.asarray(data)
        if dtype is not None:
            arr = arr.astype(dtype, copy=False)
        elif arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(default_dtype())
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self.op = "leaf"
        self._parents: tuple[Array, ...] = ()
        self._backward: BackwardFn | None = None
        self._id = next(_ids)

    # -- basic attributes -------------------------------------------------
    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def is_leaf(self) -> bool:
        return self._backward is None

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float(self.data)

    def detach(self) -> "Array":
        return Array(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Array(shape={self.shape}, op={self.op}{flag})"

    def __len__(self) -> int:
        return len(self.data)

    def backward(self) -> None:
        backward(self)

    # -- operators ----------------------------------------------------------
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

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return mul(self, -1.0)

    def __pow__(self, exponent):
        return power(self, exponent)

    def __matmul__(self, other):
        return matmul(self, other)

    def __rmatmul__(self, other):
        return matmul(other, self)

    def __getitem__(self, index):
        return getitem(self, index)

    def sum(self, axis=None, keepdims=False):
        return sum_(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes or None)

    def swapaxes(self, a: int, b: int):
        axes = list(range(self.ndim))
        axes[a], axes[b] = axes[b], axes[a]
        return transpose(self, tuple(axes))

    @property
    def T(self):
        return self.swapaxes(-1, -2)


def as_array(x, like: Array | None = None) -> Array:
    if isinstance(x, Array):
        return x
    dtype = like.dtype if like is not None else None
    return Array(np.asarray(x, dtype=dtype if dtype is not None else default_dtype()))


def make(data: np.ndarray, parents: Sequence[Array], backward_fn: BackwardFn, op: str) -> Array:
    """Wrap an op result, recording it in the graph when any parent needs grad."""
    if _get("check_finite", True) and not np.isfinite(data).all():
        raise NumericalError(f"non-finite value produced by {op}")
    out = Array(data)
    if grad_enabled() and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out.op = op
        out._parents = tuple(parents)
        out._backward = backward_fn
    return out


@dataclass
class Graph:
    """Nodes reachable from an output, in execution order."""

    nodes: list[Array] = field(default_factory=list)

    @classmethod
    def from_output(cls, out: Array) -> "Graph":
        seen: dict[int, Array] = {}
        stack = [out]
        while stack:
            node = stack.pop()
            if node._id in seen or not node.requires_grad:
                continue
            seen[node._id] = node
            stack.extend(node._parents)
        return cls(sorted(seen.values(), key=lambda a: a._id))

    def leaves(self) -> list[Array]:
        return [n for n in self.nodes if n.is_leaf]


def backward(loss: Array, graph: Graph | None = None) -> Graph:
    """Populate ``.grad`` of every requires-grad leaf with d(loss)/d(leaf).

    Gradients accumulate into existing ``.grad`` buffers; zero them between
    optimisation steps.
    """
    if loss.size != 1:
        raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        raise ContractError("loss does not depend on any array requiring grad")
    graph = graph if graph is not None else Graph.from_output(loss)
    pending: dict[int, np.ndarray] = {loss._id: np.ones_like(loss.data)}
    for node in reversed(graph.nodes):
        g = pending.pop(node._id, None)
        if g is None:
            continue
        if node._backward is None:
            node.grad = g.copy() if node.grad is None else node.grad + g
            continue
        for parent, pg in zip(node._parents, node._backward(g)):
            if pg is None or not parent.requires_grad:
                continue
            if pg.shape != parent.shape:
                raise ShapeError(f"{node.op}: gradient shape {pg.shape} != input shape {parent.shape}")
            prev = pending.get(parent._id)
            pending[parent._id] = pg if prev is None else prev + pg
    return graph


def zero_grad(params: Iterable[Array]) -> None:
    for p in params:
        p.grad = None


# ---------------------------------------------------------------------------
# elementwise arithmetic with numpy broadcasting
# ---------------------------------------------------------------------------

def unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum ``g`` down to ``shape`` (reverse of numpy broadcasting)."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


def _pair(a, b) -> tuple[Array, Array]:
    if isinstance(a, Array):
        return a, as_array(b, like=a)
    b = as_array(b)
    return as_array(a, like=b), b


def add(a, b) -> Array:
    a, b = _pair(a, b)

    def bw(g):
        return unbroadcast(g, a.shape), unbroadcast(g, b.shape)

    return make(a.data + b.data, (a, b), bw, "add")


def sub(a, b) -> Array:
    a, b = _pair(a, b)

    def bw(g):
        return unbroadcast(g, a.shape), unbroadcast(-g, b.shape)

    return make(a.data - b.data, (a, b), bw, "sub")


def mul(a, b) -> Array:
    a, b = _pair(a, b)

    def bw(g):
        return (
            unbroadcast(g * b.data, a.shape) if a.requires_grad else None,
            unbroadcast(g * a.data, b.shape) if b.requires_grad else None,
        )

    return make(a.data * b.data, (a, b), bw, "mul")


def div(a, b) -> Array:
    a, b = _pair(a, b)
    out = a.data / b.data

    def bw(g):
        return (
            unbroadcast(g / b.data, a.shape) if a.requires_grad else None,
            unbroadcast(-g * out / b.data, b.shape) if b.requires_grad else None,
        )

    return make(out, (a, b), bw, "div")


def power(a: Array, exponent: float) -> Array:
    exponent = float(exponent)

    def bw(g):
        return (g * exponent * a.data ** (exponent - 1.0),)

    return make(a.data**exponent, (a,), bw, "pow")


def exp(a: Array) -> Array:
    out = np.exp(a.data)
    return make(out, (a,), lambda g: (g * out,), "exp")


def log(a: Array) -> Array:
    with np.errstate(invalid="ignore", divide="ignore"):
        out = np.log(a.data)
    return make(out, (a,), lambda g: (g / a.data,), "log")


def sqrt(a: Array) -> Array:
    with np.errstate(invalid="ignore"):
        out = np.sqrt(a.data)
    return make(out, (a,), lambda g: (g * 0.5 / out,), "sqrt")


# ---------------------------------------------------------------------------
# linear algebra and shape manipulation
# ---------------------------------------------------------------------------

def matmul(a, b) -> Array:
    """Matrix product over the last two axes, batched over leading axes."""
    a, b = _pair(a, b)
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError(f"matmul needs arrays of rank >= 2, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul inner extents differ: {a.shape} x {b.shape}")

    def bw(g):
        ga = gb = None
        if a.requires_grad:
            ga = unbroadcast(g @ np.swapaxes(b.data, -1, -2), a.shape)
        if b.requires_grad:
            if a.ndim > 2 and b.ndim == 2:
                # fold the batch axes into rows: one large GEMM
                gb = a.data.reshape(-1, a.shape[-1]).T @ g.reshape(-1, g.shape[-1])
            else:
                gb = unbroadcast(np.swapaxes(a.data, -1, -2) @ g, b.shape)
        return ga, gb

    return make(a.data @ b.data, (a, b), bw, "matmul")


def sum_(a: Array, axis=None, keepdims: bool = False) -> Array:
    def bw(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape).copy(),)

    return make(np.asarray(a.data.sum(axis=axis, keepdims=keepdims)), (a,), bw, "sum")


def mean(a: Array, axis=None, keepdims: bool = False) -> Array:
    if axis is None:
        count = a.size
    else:
        axes = (axis,) if isinstance(axis, int) else tuple(axis)
        count = int(np.prod([a.shape[i] for i in axes]))

    def bw(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g / count, a.shape).copy(),)

    return make(np.asarray(a.data.mean(axis=axis, keepdims=keepdims)), (a,), bw, "mean")


def reshape(a: Array, shape) -> Array:
    return make(a.data.reshape(shape), (a,), lambda g: (g.reshape(a.shape),), "reshape")


def transpose(a: Array, axes=None) -> Array:
    axes = tuple(reversed(range(a.ndim))) if axes is None else tuple(axes)
    inverse = tuple(np.argsort(axes))
    return make(a.data.transpose(axes), (a,), lambda g: (g.transpose(inverse),), "transpose")


def _is_basic_index(index) -> bool:
    parts = index if isinstance(index, tuple) else (index,)
    return all(isinstance(p, (int, np.integer, slice)) or p is None or p is Ellipsis for p in parts)


def getitem(a: Array, index) -> Array:
    basic = _is_basic_index(index)

    def bw(g):
        full = np.zeros_like(a.data)
        if basic:
            full[index] = g
        else:
            np.add.at(full, index, g)
        return (full,)

    return make(np.array(a.data[index]), (a,), bw, "getitem")


def concat(arrays: Sequence[Array], axis: int = 0) -> Array:
    arrays = [as_array(x) for x in arrays]
    bounds = np.cumsum([x.shape[axis] for x in arrays])[:-1]

    def bw(g):
        return tuple(np.split(g, bounds, axis=axis))

    return make(np.concatenate([x.data for x in arrays], axis=axis), arrays, bw, "concat")


def stack(arrays: Sequence[Array], axis: int = 0) -> Array:
    arrays = [as_array(x) for x in arrays]

    def bw(g):
        return tuple(np.moveaxis(g, axis, 0))

    return make(np.stack([x.data for x in arrays], axis=axis), arrays, bw, "stack")


def pad(a: Array, widths) -> Array:
    """Zero padding; ``widths`` follows :func:`numpy.pad`."""
    widths = tuple(tuple(w) for w in widths)
    index = tuple(slice(lo, lo + n) for (lo, _), n in zip(widths, a.shape))
    return make(np.pad(a.data, widths), (a,), lambda g: (g[index],), "pad")
