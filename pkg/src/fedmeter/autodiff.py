"""Reverse-mode automatic differentiation over float64 numpy arrays.

A :class:`Tensor` wraps an ndarray.  Primitive operations record a node on
an implicit tape (the chain of nodes hanging off each result) whenever any
input participates in gradient tracking.  :func:`backward` replays the tape
once, in reverse topological order, accumulating gradients into the leaf
tensors that requested them.  The tape is single-use: a fresh forward pass
is required for every gradient evaluation.

Broadcasting is deliberately restricted to two patterns -- scalar with
tensor, and a trailing-suffix operand (bias/gain application).  Anything
else must go through an explicit :func:`broadcast_to`.  All data is
float64.
"""

from __future__ import annotations

from typing import Callable, Iterable, Sequence

import numpy as np

__all__ = [
    "Tensor",
    "ShapeError",
    "backward",
    "no_grad",
    "add",
    "sub",
    "mul",
    "matmul",
    "sigmoid",
    "tanh",
    "relu",
    "exp",
    "log",
    "power",
    "softmax",
    "mean",
    "concat",
    "slice_axis",
    "reshape",
    "transpose",
    "broadcast_to",
    "clip",
    "sign",
    "custom_op",
]


class ShapeError(ValueError):
    """Raised when operand shapes do not conform to a primitive's rules."""


class _Node:
    """One recorded primitive: its inputs and backward rule.

    Nodes deliberately hold no reference to their output tensor (the output
    holds the node), keeping the graph cycle-free so intermediates are freed
    by reference counting as soon as the backward pass is done with them.
    """

    __slots__ = ("inputs", "backward_fn", "consumed")

    def __init__(self, inputs: tuple["Tensor", ...],
                 backward_fn: Callable[[np.ndarray], tuple]):
        self.inputs = inputs
        self.backward_fn = backward_fn
        self.consumed = False


class Tensor:
    """Immutable-by-convention float64 array with optional gradient."""

    __slots__ = ("data", "requires_grad", "grad", "_node")

    def __init__(self, data, requires_grad: bool = False):
        arr = np.asarray(data, dtype=np.float64)
        if not np.all(np.isfinite(arr)):
            raise ValueError("Tensor data must be finite (no NaN/Inf)")
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self._node: _Node | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def item(self) -> float:
        return float(self.data.reshape(-1)[0])

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    # arithmetic sugar; scalars are wrapped on the fly
    def __add__(self, other):
        return add(self, _as_tensor(other))

    def __radd__(self, other):
        return add(_as_tensor(other), self)

    def __sub__(self, other):
        return sub(self, _as_tensor(other))

    def __rsub__(self, other):
        return sub(_as_tensor(other), self)

    def __mul__(self, other):
        return mul(self, _as_tensor(other))

    def __rmul__(self, other):
        return mul(_as_tensor(other), self)

    def __neg__(self):
        return mul(self, _as_tensor(-1.0))

    def __matmul__(self, other):
        return matmul(self, _as_tensor(other))


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=np.float64))


# ---------------------------------------------------------------------------
# recording machinery

_grad_enabled = True


class no_grad:
    """Context manager that suspends tape recording (evaluation mode)."""

    def __enter__(self):
        global _grad_enabled
        self._prev = _grad_enabled
        _grad_enabled = False
        return self

    def __exit__(self, *exc):
        global _grad_enabled
        _grad_enabled = self._prev
        return False


def _make(out_data: np.ndarray, inputs: tuple[Tensor, ...],
          backward_fn: Callable[[np.ndarray], tuple]) -> Tensor:
    """Wrap an op result; record a node when any input tracks gradients."""
    out = Tensor.__new__(Tensor)
    out.data = out_data
    out.grad = None
    out._node = None
    out.requires_grad = _grad_enabled and any(t.requires_grad for t in inputs)
    if out.requires_grad:
        out._node = _Node(inputs, backward_fn)
    return out


def backward(loss: Tensor) -> None:
    """Run the reverse pass from a scalar loss.

    Every leaf tensor with ``requires_grad`` accumulates its gradient into
    ``.grad`` (summed when the leaf feeds the graph more than once).  The
    tape is consumed; calling backward twice on the same graph raises.
    """
    if loss.data.shape not in ((), (1,)):
        raise ValueError(f"backward requires a scalar loss, got shape {loss.data.shape}")
    root = loss._node
    if root is None:
        raise ValueError("backward on a tensor with an empty tape (no recorded operations)")
    if root.consumed:
        raise RuntimeError("backward called twice on a consumed tape; rerun the forward pass")

    # Iterative post-order DFS: inputs appear before the nodes that use them.
    tape: list[_Node] = []
    visited: set[int] = set()
    stack: list[tuple[_Node, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            tape.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        if node.consumed:
            raise RuntimeError("graph reuses a consumed tape; rerun the forward pass")
        stack.append((node, True))
        for t in node.inputs:
            if t._node is not None and id(t._node) not in visited:
                stack.append((t._node, False))

    grads: dict[int, np.ndarray] = {id(root): np.ones_like(loss.data)}
    for node in reversed(tape):
        node.consumed = True
        g = grads.pop(id(node), None)
        if g is not None:
            for t, ig in zip(node.inputs, node.backward_fn(g)):
                if ig is None or not t.requires_grad:
                    continue
                if t._node is None:
                    t.grad = ig.copy() if t.grad is None else t.grad + ig
                else:
                    nid = id(t._node)
                    acc = grads.get(nid)
                    grads[nid] = ig if acc is None else acc + ig
        # release saved activations as soon as this node is done
        node.inputs = ()
        node.backward_fn = _consumed_fn


def _consumed_fn(_g):
    raise RuntimeError("backward rule already consumed")


def clear_grads(tensors: Iterable[Tensor]) -> None:
    for t in tensors:
        t.grad = None


# ---------------------------------------------------------------------------
# broadcasting rules for elementwise ops

def _is_scalar_shape(shape: tuple[int, ...]) -> bool:
    return shape == () or shape == (1,)


def _elementwise_shapes(name: str, a: Tensor, b: Tensor) -> tuple[int, ...]:
    """Output shape for add/sub/mul under the restricted broadcast rules."""
    sa, sb = a.data.shape, b.data.shape
    if sa == sb:
        return sa
    if _is_scalar_shape(sb):
        return sa
    if _is_scalar_shape(sa):
        return sb
    # trailing-suffix operand (bias or gain over the last axes)
    if len(sb) < len(sa) and sa[len(sa) - len(sb):] == sb:
        return sa
    if len(sa) < len(sb) and sb[len(sb) - len(sa):] == sa:
        return sb
    raise ShapeError(
        f"{name}: shapes {sa} and {sb} do not conform "
        f"(allowed: equal, scalar, or trailing-suffix broadcast)")


def _reduce_to(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum a gradient down to the shape of a broadcast operand."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    if grad.shape != shape:  # remaining size-1 axes (broadcast_to case)
        axes = tuple(i for i, (g, s) in enumerate(zip(grad.shape, shape)) if s == 1 and g != 1)
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


# ---------------------------------------------------------------------------
# primitives

def add(a: Tensor, b: Tensor) -> Tensor:
    _elementwise_shapes("add", a, b)
    out = a.data + b.data

    def bw(g):
        return _reduce_to(g, a.data.shape), _reduce_to(g, b.data.shape)

    return _make(out, (a, b), bw)


def sub(a: Tensor, b: Tensor) -> Tensor:
    _elementwise_shapes("subtract", a, b)
    out = a.data - b.data

    def bw(g):
        return _reduce_to(g, a.data.shape), -_reduce_to(g, b.data.shape)

    return _make(out, (a, b), bw)


def mul(a: Tensor, b: Tensor) -> Tensor:
    _elementwise_shapes("multiply", a, b)
    out = a.data * b.data
    ad, bd = a.data, b.data

    def bw(g):
        return _reduce_to(g * bd, ad.shape), _reduce_to(g * ad, bd.shape)

    return _make(out, (a, b), bw)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product: 2D@2D, 3D@3D (matching batch), or 3D@2D (shared weights)."""
    sa, sb = a.data.shape, b.data.shape
    ad, bd = a.data, b.data

    if len(sa) == 2 and len(sb) == 2 and sa[1] == sb[0]:
        out = ad @ bd

        def bw(g):
            return g @ bd.T, ad.T @ g

    elif len(sa) == 3 and len(sb) == 3 and sa[0] == sb[0] and sa[2] == sb[1]:
        out = np.matmul(ad, bd)

        def bw(g):
            return (np.matmul(g, bd.swapaxes(-1, -2)),
                    np.matmul(ad.swapaxes(-1, -2), g))

    elif len(sa) == 3 and len(sb) == 2 and sa[2] == sb[0]:
        # flatten the batch so the whole product is one gemm
        batch, rows, inner = sa
        a2 = ad.reshape(batch * rows, inner)
        out = (a2 @ bd).reshape(batch, rows, sb[1])

        def bw(g):
            g2 = g.reshape(batch * rows, sb[1])
            return (g2 @ bd.T).reshape(sa), a2.T @ g2

    else:
        raise ShapeError(f"matmul: shapes {sa} and {sb} do not conform")

    return _make(out, (a, b), bw)


def _sigmoid_np(x: np.ndarray) -> np.ndarray:
    # overflow-free for any finite input
    e = np.exp(-np.abs(x))
    return np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e))


def sigmoid(t: Tensor) -> Tensor:
    out = _sigmoid_np(t.data)

    def bw(g):
        return (g * out * (1.0 - out),)

    return _make(out, (t,), bw)


def tanh(t: Tensor) -> Tensor:
    out = np.tanh(t.data)

    def bw(g):
        return (g * (1.0 - out * out),)

    return _make(out, (t,), bw)


def relu(t: Tensor) -> Tensor:
    out = np.maximum(t.data, 0.0)
    mask = t.data > 0

    def bw(g):
        return (g * mask,)

    return _make(out, (t,), bw)


def exp(t: Tensor) -> Tensor:
    out = np.exp(t.data)
    _check_finite("exp", out)

    def bw(g):
        return (g * out,)

    return _make(out, (t,), bw)


def log(t: Tensor) -> Tensor:
    with np.errstate(divide="raise", invalid="raise"):
        try:
            out = np.log(t.data)
        except FloatingPointError:
            raise ValueError("log: input must be strictly positive") from None
    x = t.data

    def bw(g):
        return (g / x,)

    return _make(out, (t,), bw)


def power(t: Tensor, p: float) -> Tensor:
    """Elementwise ``t ** p`` for a constant real exponent."""
    p = float(p)
    out = t.data ** p
    _check_finite("power", out)
    x = t.data

    def bw(g):
        if p == 0.0:
            return (np.zeros_like(x),)
        return (g * p * x ** (p - 1.0),)

    return _make(out, (t,), bw)


def softmax(t: Tensor, axis: int = -1) -> Tensor:
    shifted = t.data - t.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=axis, keepdims=True)

    def bw(g):
        inner = (g * out).sum(axis=axis, keepdims=True)
        return (out * (g - inner),)

    return _make(out, (t,), bw)


def mean(t: Tensor, axis: int | None = None, keepdims: bool = False) -> Tensor:
    out = t.data.mean(axis=axis, keepdims=keepdims)
    shape = t.data.shape
    count = t.data.size if axis is None else shape[axis]

    def bw(g):
        if axis is None:
            return (np.full(shape, float(g) / count),)
        if not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g / count, shape).copy(),)

    return _make(np.asarray(out), (t,), bw)


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    if not tensors:
        raise ShapeError("concat: need at least one tensor")
    out = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.data.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def bw(g):
        return tuple(np.split(g, splits, axis=axis))

    return _make(out, tuple(tensors), bw)


def slice_axis(t: Tensor, axis: int, start: int, stop: int) -> Tensor:
    """Contiguous slice [start, stop) along one axis."""
    nd = t.data.ndim
    if not (0 <= axis < nd):
        raise ShapeError(f"slice: axis {axis} out of range for shape {t.data.shape}")
    key = tuple(slice(start, stop) if i == axis else slice(None) for i in range(nd))
    out = t.data[key].copy()
    shape = t.data.shape

    def bw(g):
        full = np.zeros(shape)
        full[key] = g
        return (full,)

    return _make(out, (t,), bw)


def reshape(t: Tensor, shape: Sequence[int]) -> Tensor:
    shape = tuple(shape)
    out = t.data.reshape(shape)
    orig = t.data.shape

    def bw(g):
        return (g.reshape(orig),)

    return _make(out, (t,), bw)


def transpose(t: Tensor, axes: Sequence[int] | None = None) -> Tensor:
    if axes is None:
        axes = tuple(reversed(range(t.data.ndim)))
    axes = tuple(axes)
    out = np.transpose(t.data, axes)
    inverse = tuple(np.argsort(axes))

    def bw(g):
        return (np.transpose(g, inverse),)

    return _make(out, (t,), bw)


def broadcast_to(t: Tensor, shape: Sequence[int]) -> Tensor:
    """Explicit broadcast; the backward pass sums over the expanded axes."""
    shape = tuple(shape)
    try:
        out = np.broadcast_to(t.data, shape).copy()
    except ValueError:
        raise ShapeError(f"broadcast_to: cannot broadcast {t.data.shape} to {shape}") from None
    orig = t.data.shape

    def bw(g):
        return (_reduce_to(g, orig),)

    return _make(out, (t,), bw)


def clip(t: Tensor, lo: float, hi: float) -> Tensor:
    """Clamp values into [lo, hi]; gradient passes through the interior only."""
    out = np.clip(t.data, lo, hi)
    mask = (t.data >= lo) & (t.data <= hi)

    def bw(g):
        return (g * mask,)

    return _make(out, (t,), bw)


def sign(t: Tensor) -> Tensor:
    """Elementwise sign in {-1, 0, +1}; not differentiable, never recorded."""
    return Tensor(np.sign(t.data))


def custom_op(out_data: np.ndarray, inputs: tuple[Tensor, ...],
              backward_fn: Callable[[np.ndarray], tuple]) -> Tensor:
    """Record a caller-defined primitive with its own backward rule.

    ``backward_fn`` receives the output gradient and must return one
    gradient (or None) per input, each matching that input's shape.
    """
    return _make(np.asarray(out_data, dtype=np.float64), tuple(inputs), backward_fn)


def _check_finite(name: str, arr: np.ndarray) -> None:
    if not np.all(np.isfinite(arr)):
        raise FloatingPointError(f"{name}: produced non-finite values")
