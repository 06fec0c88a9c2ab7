"""Dense tensors with reverse-mode automatic differentiation.

A :class:`Tensor` wraps a numpy array (row-major, float32 by default;
float64 is used for gradient-check runs) together with the bookkeeping
needed to run backpropagation: the parent tensors it was computed from and
a closure implementing the local backward rule. Graphs are built
dynamically by calling ops; :func:`backward` walks them in reverse
topological order. The traversal order is fixed by construction order, so
gradient accumulation is deterministic.

Every op materializes its output (no view aliasing across autodiff
boundaries). Elementwise ops require exactly matching shapes or a python
scalar operand; anything needing broadcasting (bias addition, batch norm
affine) lives in fused layer ops instead.
"""

from __future__ import annotations

import contextlib
from typing import Callable, Iterable, Optional, Sequence

import numpy as np

from .errors import ShapeError

__all__ = [
    "Tensor",
    "Parameter",
    "no_grad",
    "make_op",
    "add",
    "sub",
    "mul",
    "div",
    "neg",
    "relu",
    "exp",
    "log",
    "sqrt",
    "power",
    "reduce_sum",
    "reduce_mean",
    "matmul",
    "reshape",
    "transpose",
    "concat",
    "vector_norm",
    "backward",
]

_grad_enabled = True


@contextlib.contextmanager
def no_grad():
    """Disable graph construction inside the block (inference / data prep)."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


def _as_array(data, dtype=None) -> np.ndarray:
    if isinstance(data, np.ndarray):
        return data if dtype is None else data.astype(dtype, copy=False)
    if isinstance(data, (np.floating, np.integer)):
        # numpy scalar (e.g. a full reduction): keep its precision
        return np.asarray(data, dtype=dtype)
    return np.asarray(data, dtype=dtype or np.float32)


class Tensor:
    """A node in the computation graph: value + optional gradient + parents."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        self.data = _as_array(data, dtype)
        self.grad: Optional[np.ndarray] = None
        self.requires_grad = bool(requires_grad) and _grad_enabled
        self._parents: tuple = ()
        self._backward: Optional[Callable] = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype}, grad={'set' if self.grad is not None else 'none'})"

    # operator sugar
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(self, other)

    def __truediv__(self, other):
        return div(self, other)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def sum(self, axes=None):
        return reduce_sum(self, axes)

    def mean(self, axes=None):
        return reduce_mean(self, axes)

    def reshape(self, *shape):
        return reshape(self, shape if len(shape) > 1 else shape[0])

    def transpose(self, *axes):
        return transpose(self, axes if len(axes) > 1 else axes[0])


class Parameter(Tensor):
    """Trainable leaf tensor with a model-unique name (checkpoints key on it)."""

    __slots__ = ("name",)

    def __init__(self, data, name: str, dtype=None):
        super().__init__(data, requires_grad=True, dtype=dtype)
        self.name = name

    def __repr__(self):
        return f"Parameter({self.name!r}, shape={self.data.shape})"


def make_op(data: np.ndarray, parents: Sequence[Tensor], backward: Callable) -> Tensor:
    """Create an op result tensor.

    ``backward(grad)`` must return one gradient array (or None) per parent,
    each freshly allocated. Graph edges are only recorded while gradients
    are enabled and at least one parent requires them.
    """
    out = Tensor(data)
    if _grad_enabled and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward
    return out


def _coerce_operands(a: Tensor, b):
    """Return (a, b_value, b_tensor_or_None) enforcing the elementwise contract."""
    if isinstance(b, Tensor):
        if a.data.shape != b.data.shape:
            raise ShapeError(
                f"elementwise operands must match: {a.data.shape} vs {b.data.shape}"
            )
        return b.data, b
    if isinstance(b, (int, float, np.floating, np.integer)):
        return float(b), None
    raise TypeError(f"unsupported operand type {type(b)!r}")


def add(a: Tensor, b) -> Tensor:
    bval, bt = _coerce_operands(a, b)
    data = a.data + bval
    if bt is None:
        return make_op(data, (a,), lambda g: (g.copy(),))
    return make_op(data, (a, bt), lambda g: (g.copy(), g.copy()))


def sub(a: Tensor, b) -> Tensor:
    bval, bt = _coerce_operands(a, b)
    data = a.data - bval
    if bt is None:
        return make_op(data, (a,), lambda g: (g.copy(),))
    return make_op(data, (a, bt), lambda g: (g.copy(), -g))


def mul(a: Tensor, b) -> Tensor:
    bval, bt = _coerce_operands(a, b)
    data = a.data * bval
    if bt is None:
        return make_op(data, (a,), lambda g: (g * bval,))
    return make_op(data, (a, bt), lambda g: (g * bt.data, g * a.data))


def div(a: Tensor, b) -> Tensor:
    bval, bt = _coerce_operands(a, b)
    data = a.data / bval
    if bt is None:
        return make_op(data, (a,), lambda g: (g / bval,))

    def bwd(g):
        return g / bt.data, -g * a.data / (bt.data * bt.data)

    return make_op(data, (a, bt), bwd)


def neg(a: Tensor) -> Tensor:
    return make_op(-a.data, (a,), lambda g: (-g,))


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0
    return make_op(a.data * mask, (a,), lambda g: (g * mask,))


def exp(a: Tensor) -> Tensor:
    data = np.exp(a.data)
    return make_op(data, (a,), lambda g: (g * data,))


def log(a: Tensor) -> Tensor:
    return make_op(np.log(a.data), (a,), lambda g: (g / a.data,))


def sqrt(a: Tensor) -> Tensor:
    data = np.sqrt(a.data)
    return make_op(data, (a,), lambda g: (g * (0.5 / data),))


def power(a: Tensor, p: float) -> Tensor:
    data = a.data**p
    return make_op(data, (a,), lambda g: (g * (p * a.data ** (p - 1)),))


def _norm_axes(axes, ndim: int):
    if axes is None:
        return tuple(range(ndim))
    if isinstance(axes, int):
        axes = (axes,)
    axes = tuple(int(ax) for ax in axes)
    for ax in axes:
        if not -ndim <= ax < ndim:
            raise ShapeError(f"axis {ax} invalid for ndim {ndim}")
    return tuple(sorted(ax % ndim for ax in axes))


def reduce_sum(a: Tensor, axes=None, keepdims: bool = False) -> Tensor:
    axes = _norm_axes(axes, a.data.ndim)
    data = a.data.sum(axis=axes, keepdims=keepdims)

    def bwd(g):
        gk = g if keepdims else np.expand_dims(g, axes)
        return (np.broadcast_to(gk, a.data.shape).copy(),)

    return make_op(data, (a,), bwd)


def reduce_mean(a: Tensor, axes=None, keepdims: bool = False) -> Tensor:
    axes = _norm_axes(axes, a.data.ndim)
    count = 1
    for ax in axes:
        count *= a.data.shape[ax]
    data = a.data.mean(axis=axes, keepdims=keepdims)

    def bwd(g):
        gk = g if keepdims else np.expand_dims(g, axes)
        return (np.broadcast_to(gk / count, a.data.shape).copy(),)

    return make_op(data, (a,), bwd)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim != 2 or b.data.ndim != 2 or a.data.shape[1] != b.data.shape[0]:
        raise ShapeError(f"matmul shapes incompatible: {a.data.shape} @ {b.data.shape}")
    data = a.data @ b.data

    def bwd(g):
        return g @ b.data.T, a.data.T @ g

    return make_op(data, (a, b), bwd)


def reshape(a: Tensor, shape) -> Tensor:
    data = a.data.reshape(shape)
    return make_op(data, (a,), lambda g: (g.reshape(a.data.shape),))


def transpose(a: Tensor, axes) -> Tensor:
    axes = tuple(axes)
    inv = np.argsort(axes)
    data = np.ascontiguousarray(a.data.transpose(axes))
    return make_op(data, (a,), lambda g: (np.ascontiguousarray(g.transpose(inv)),))


def concat(tensors: Sequence[Tensor], axis: int) -> Tensor:
    datas = [t.data for t in tensors]
    data = np.concatenate(datas, axis=axis)
    splits = np.cumsum([d.shape[axis] for d in datas])[:-1]

    def bwd(g):
        return tuple(np.ascontiguousarray(p) for p in np.split(g, splits, axis=axis))

    return make_op(data, tuple(tensors), bwd)


def vector_norm(a: Tensor, axis: int, tiny: float = 1e-12) -> Tensor:
    """Euclidean norm along ``axis`` (the channel axis of a flow field).

    Forward is the exact norm; backward divides by max(norm, tiny) so the
    zero-residual point has a bounded (zero) subgradient.
    """
    data = np.sqrt((a.data * a.data).sum(axis=axis))
    safe = np.maximum(data, tiny)

    def bwd(g):
        scale = g / safe
        return (a.data * np.expand_dims(scale, axis),)

    return make_op(data, (a,), bwd)


def _toposort(root: Tensor) -> list:
    """Depth-first post-order over parents; deterministic by construction order."""
    order = []
    seen = set()
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
        for p in reversed(node._parents):
            if id(p) not in seen:
                stack.append((p, False))
    return order


def backward(root: Tensor) -> None:
    """Backpropagate from a scalar root; ancestors end up holding dL/dx.

    Gradients of every node reachable from the root are cleared first, so
    calling backward twice on the same graph is reproducible bit for bit.
    """
    if root.data.size != 1:
        raise ShapeError(f"backward root must be scalar, got shape {root.data.shape}")
    order = _toposort(root)
    for node in order:
        node.grad = None
    root.grad = np.ones_like(root.data)
    for node in reversed(order):
        if node._backward is None or node.grad is None:
            continue
        grads = node._backward(node.grad)
        for parent, g in zip(node._parents, grads):
            if g is None or not parent.requires_grad:
                continue
            if parent.grad is None:
                parent.grad = g
            else:
                parent.grad = parent.grad + g


def zero_grads(params: Iterable[Tensor]) -> None:
    for p in params:
        p.grad = None
