"""Minimal reverse-mode automatic differentiation on float64 numpy arrays.

Every operation returns a new :class:`Tensor`. When gradient recording is on
and at least one input requires a gradient, the output keeps a pointer to its
inputs and a closure mapping the output adjoint to the input adjoints. The
graph is therefore rebuilt on every forward pass, which suits recurrent models
whose unrolled length changes from one sequence to the next.

Broadcasting is deliberately restricted: binary elementwise operations accept
either identical shapes or a 0-d scalar on one side. Anything else must go
through :func:`broadcast_to` explicitly.
"""

from __future__ import annotations

import builtins
import threading
from contextlib import contextmanager
from typing import Callable, Sequence

import numpy as np

from .errors import ContractError, DomainError, ShapeError

__all__ = [
    "Tensor",
    "no_grad",
    "is_grad_enabled",
    "tensor",
    "add",
    "sub",
    "mul",
    "div",
    "neg",
    "exp",
    "log",
    "tanh",
    "sigmoid",
    "sqrt",
    "matmul",
    "sum",
    "mean",
    "reshape",
    "transpose",
    "broadcast_to",
    "concat",
    "split",
    "softmax",
    "log_softmax",
    "logsumexp",
    "cdist",
    "numerical_gradient",
    "max_relative_error",
]

_state = threading.local()


def is_grad_enabled() -> bool:
    return getattr(_state, "enabled", True)


@contextmanager
def no_grad():
    """Disable graph recording in the current thread."""
    prev = is_grad_enabled()
    _state.enabled = False
    try:
        yield
    finally:
        _state.enabled = prev


Backward = Callable[[np.ndarray], Sequence["np.ndarray | None"]]


class Tensor:
    """A float64 array that can take part in gradient computation."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "op")
    __array_priority__ = 1000

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.array(data, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.requires_grad = bool(requires_grad)
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Backward | None = None
        self.op = "leaf"

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

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
            raise ContractError(f"item() needs a single-element tensor, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def numpy(self) -> np.ndarray:
        return self.data

    def detach(self) -> "Tensor":
        return _wrap(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor({np.array2string(self.data, precision=6)}{flag})"

    def __len__(self) -> int:
        return len(self.data)

    # operators
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
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __rmatmul__(self, other):
        return matmul(other, self)

    def __getitem__(self, index):
        return _getitem(self, index)

    def exp(self):
        return exp(self)

    def log(self):
        return log(self)

    def tanh(self):
        return tanh(self)

    def sigmoid(self):
        return sigmoid(self)

    def sum(self, axis=None):
        return sum(self, axis)

    def mean(self, axis=None):
        return mean(self, axis)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def broadcast_to(self, shape):
        return broadcast_to(self, shape)

    def backward(self, grad=None) -> None:
        """Accumulate d(self)/d(leaf) into ``.grad`` of every reachable leaf.

        Intermediate adjoints live only for the duration of the call, so
        calling ``backward`` twice on the same graph adds the same gradient
        twice to the leaves.
        """
        if self.data.size != 1:
            raise ContractError(f"backward() needs a scalar root, got shape {self.shape}")
        seed = np.ones_like(self.data) if grad is None else np.asarray(grad, dtype=np.float64).reshape(self.shape)
        if self._backward is None:
            if self.requires_grad:
                _accumulate(self, seed)
            return
        adjoints = {id(self): seed}
        for node in reversed(_topological_order(self)):
            g = adjoints.pop(id(node), None)
            if g is None:
                continue
            for parent, pg in zip(node._parents, node._backward(g)):
                if pg is None or not parent.requires_grad:
                    continue
                if parent._backward is None:
                    _accumulate(parent, pg)
                else:
                    key = id(parent)
                    prev = adjoints.get(key)
                    adjoints[key] = pg if prev is None else prev + pg


def _accumulate(leaf: Tensor, g: np.ndarray) -> None:
    if g.shape != leaf.data.shape:
        g = np.reshape(g, leaf.data.shape)
    if leaf.grad is None:
        leaf.grad = np.array(g, dtype=np.float64, copy=True)
    else:
        leaf.grad += g


def _topological_order(root: Tensor) -> list[Tensor]:
    """Interior nodes reachable from ``root``, inputs before outputs."""
    order: list[Tensor] = []
    visited = {id(root)}
    stack = [(root, iter(root._parents))]
    while stack:
        node, parents = stack[-1]
        for p in parents:
            if p._backward is not None and id(p) not in visited:
                visited.add(id(p))
                stack.append((p, iter(p._parents)))
                break
        else:
            stack.pop()
            order.append(node)
    return order


def _wrap(data: np.ndarray) -> Tensor:
    t = Tensor.__new__(Tensor)
    t.data = data
    t.grad = None
    t.requires_grad = False
    t._parents = ()
    t._backward = None
    t.op = "leaf"
    return t


def _result(data: np.ndarray, parents: tuple[Tensor, ...], backward: Backward, op: str) -> Tensor:
    out = _wrap(data)
    if is_grad_enabled():
        for p in parents:
            if p.requires_grad:
                out.requires_grad = True
                out._parents = parents
                out._backward = backward
                out.op = op
                break
    return out


def tensor(data, requires_grad: bool = False) -> Tensor:
    return Tensor(data, requires_grad=requires_grad)


def _t(x) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return _wrap(np.asarray(x, dtype=np.float64))


# ---------------------------------------------------------------- elementwise


def _check_binary(a: Tensor, b: Tensor, name: str) -> None:
    sa, sb = a.data.shape, b.data.shape
    if sa != sb and a.data.ndim != 0 and b.data.ndim != 0:
        raise ShapeError(f"{name}: shapes {sa} and {sb} differ (only 0-d scalars broadcast)")


def _unbroadcast(g: np.ndarray, x: Tensor) -> np.ndarray:
    if g.shape == x.data.shape:
        return g
    return np.asarray(g.sum())


def add(a, b) -> Tensor:
    a, b = _t(a), _t(b)
    _check_binary(a, b, "add")

    def backward(g):
        return _unbroadcast(g, a), _unbroadcast(g, b)

    return _result(a.data + b.data, (a, b), backward, "add")


def sub(a, b) -> Tensor:
    a, b = _t(a), _t(b)
    _check_binary(a, b, "sub")

    def backward(g):
        return _unbroadcast(g, a), _unbroadcast(-g, b)

    return _result(a.data - b.data, (a, b), backward, "sub")


def mul(a, b) -> Tensor:
    a, b = _t(a), _t(b)
    _check_binary(a, b, "mul")

    def backward(g):
        return _unbroadcast(g * b.data, a), _unbroadcast(g * a.data, b)

    return _result(a.data * b.data, (a, b), backward, "mul")


def div(a, b) -> Tensor:
    a, b = _t(a), _t(b)
    _check_binary(a, b, "div")
    if np.any(b.data == 0):
        raise DomainError("div: division by zero")
    out = a.data / b.data

    def backward(g):
        return _unbroadcast(g / b.data, a), _unbroadcast(-g * out / b.data, b)

    return _result(out, (a, b), backward, "div")


def neg(a) -> Tensor:
    a = _t(a)
    return _result(-a.data, (a,), lambda g: (-g,), "neg")


def exp(a) -> Tensor:
    a = _t(a)
    out = np.exp(a.data)
    return _result(out, (a,), lambda g: (g * out,), "exp")


def log(a) -> Tensor:
    a = _t(a)
    if np.any(a.data <= 0):
        raise DomainError("log: input has non-positive entries")
    return _result(np.log(a.data), (a,), lambda g: (g / a.data,), "log")


def sqrt(a) -> Tensor:
    a = _t(a)
    if np.any(a.data <= 0):
        raise DomainError("sqrt: gradient undefined for non-positive entries")
    out = np.sqrt(a.data)
    return _result(out, (a,), lambda g: (0.5 * g / out,), "sqrt")


def tanh(a) -> Tensor:
    a = _t(a)
    out = np.tanh(a.data)
    return _result(out, (a,), lambda g: (g * (1.0 - out * out),), "tanh")


def sigmoid(a) -> Tensor:
    a = _t(a)
    # tanh form is overflow-free on both tails and exact at 0
    out = 0.5 * (1.0 + np.tanh(0.5 * a.data))
    return _result(out, (a,), lambda g: (g * out * (1.0 - out),), "sigmoid")


# ------------------------------------------------------------------- linear


def matmul(a, b) -> Tensor:
    a, b = _t(a), _t(b)
    if a.data.ndim != 2 or b.data.ndim != 2 or a.data.shape[1] != b.data.shape[0]:
        raise ShapeError(f"matmul: cannot multiply {a.shape} by {b.shape}")

    def backward(g):
        return (g @ b.data.T if a.requires_grad else None,
                a.data.T @ g if b.requires_grad else None)

    return _result(a.data @ b.data, (a, b), backward, "matmul")


# ---------------------------------------------------------------- reductions


def _check_axis(x: Tensor, axis: int, name: str) -> int:
    nd = x.data.ndim
    if not -nd <= axis < nd:
        raise ShapeError(f"{name}: axis {axis} out of range for shape {x.shape}")
    return axis % nd


def sum(a, axis: int | None = None) -> Tensor:  # noqa: A001 - mirrors numpy naming
    a = _t(a)
    shape = a.data.shape
    if axis is None:
        return _result(np.asarray(a.data.sum()), (a,), lambda g: (np.broadcast_to(g, shape),), "sum")
    axis = _check_axis(a, axis, "sum")

    def backward(g):
        return (np.broadcast_to(np.expand_dims(g, axis), shape),)

    return _result(a.data.sum(axis=axis), (a,), backward, "sum")


def mean(a, axis: int | None = None) -> Tensor:
    a = _t(a)
    n = a.data.size if axis is None else a.data.shape[_check_axis(a, axis, "mean")]
    return mul(sum(a, axis), 1.0 / n)


# ------------------------------------------------------------------- shaping


def reshape(a, shape) -> Tensor:
    a = _t(a)
    shape = tuple(shape)
    orig = a.data.shape
    try:
        out = a.data.reshape(shape)
    except ValueError as exc:
        raise ShapeError(f"reshape: cannot reshape {orig} to {shape}") from exc
    return _result(out, (a,), lambda g: (g.reshape(orig),), "reshape")


def transpose(a) -> Tensor:
    a = _t(a)
    if a.data.ndim != 2:
        raise ShapeError(f"transpose: expected a matrix, got shape {a.shape}")
    return _result(a.data.T, (a,), lambda g: (g.T,), "transpose")


def broadcast_to(a, shape) -> Tensor:
    """Explicitly replicate size-1 axes (same rank) or a 0-d scalar up to ``shape``."""
    a = _t(a)
    shape = tuple(shape)
    orig = a.data.shape
    if a.data.ndim == 0:
        axes = None
    else:
        if len(orig) != len(shape) or any(o != s and o != 1 for o, s in zip(orig, shape)):
            raise ShapeError(f"broadcast_to: cannot broadcast {orig} to {shape}")
        axes = tuple(i for i, (o, s) in enumerate(zip(orig, shape)) if o != s)

    def backward(g):
        if axes is None:
            return (np.asarray(g.sum()),)
        return (g.sum(axis=axes, keepdims=True) if axes else g,)

    return _result(np.broadcast_to(a.data, shape), (a,), backward, "broadcast_to")


def _is_basic_index(index) -> bool:
    items = index if isinstance(index, tuple) else (index,)
    return all(isinstance(i, (int, np.integer, slice)) or i is None or i is Ellipsis for i in items)


def _getitem(a: Tensor, index) -> Tensor:
    shape = a.data.shape
    basic = _is_basic_index(index)
    if not basic:
        index = tuple(np.asarray(i) if isinstance(i, (list, tuple)) else i for i in index) if isinstance(
            index, tuple) else np.asarray(index)
    out = a.data[index]

    def backward(g):
        full = np.zeros(shape)
        if basic:
            full[index] = g
        else:
            np.add.at(full, index, g)
        return (full,)

    return _result(np.array(out, copy=True) if basic else out, (a,), backward, "getitem")


def concat(tensors: Sequence, axis: int = 0) -> Tensor:
    """Join tensors along ``axis``; all other extents must agree."""
    ts = [_t(x) for x in tensors]
    if not ts:
        raise ContractError("concat: need at least one tensor")
    axis = _check_axis(ts[0], axis, "concat")
    ref = ts[0].data.shape
    for x in ts[1:]:
        s = x.data.shape
        if len(s) != len(ref) or any(u != v for i, (u, v) in enumerate(zip(s, ref)) if i != axis):
            raise ShapeError(f"concat: shapes {ref} and {s} disagree off axis {axis}")
    cuts = np.cumsum([x.data.shape[axis] for x in ts])[:-1]

    def backward(g):
        return tuple(np.split(g, cuts, axis=axis))

    return _result(np.concatenate([x.data for x in ts], axis=axis), tuple(ts), backward, "concat")


def split(a, sizes: Sequence[int], axis: int = 0) -> list[Tensor]:
    """Inverse of :func:`concat`: cut ``a`` into consecutive pieces of the given extents."""
    a = _t(a)
    axis = _check_axis(a, axis, "split")
    if builtins.sum(sizes) != a.data.shape[axis]:
        raise ShapeError(f"split: sizes {list(sizes)} do not cover axis {axis} of shape {a.shape}")
    pieces, start = [], 0
    for n in sizes:
        idx = [slice(None)] * a.data.ndim
        idx[axis] = slice(start, start + n)
        pieces.append(_getitem(a, tuple(idx)))
        start += n
    return pieces


# ------------------------------------------------------------- normalizers


def softmax(a, axis: int = -1) -> Tensor:
    """Max-shifted softmax along ``axis``."""
    a = _t(a)
    if a.data.size == 0:
        raise ContractError("softmax: empty input")
    if not np.all(np.isfinite(a.data)):
        raise FloatingPointError("softmax: non-finite input")
    axis = _check_axis(a, axis, "softmax")
    z = np.exp(a.data - a.data.max(axis=axis, keepdims=True))
    out = z / z.sum(axis=axis, keepdims=True)

    def backward(g):
        return (out * (g - (g * out).sum(axis=axis, keepdims=True)),)

    return _result(out, (a,), backward, "softmax")


def log_softmax(a, axis: int = -1) -> Tensor:
    a = _t(a)
    axis = _check_axis(a, axis, "log_softmax")
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=axis, keepdims=True))
    out = shifted - lse

    def backward(g):
        return (g - np.exp(out) * g.sum(axis=axis, keepdims=True),)

    return _result(out, (a,), backward, "log_softmax")


def logsumexp(a, axis: int) -> Tensor:
    a = _t(a)
    axis = _check_axis(a, axis, "logsumexp")
    m = a.data.max(axis=axis, keepdims=True)
    z = np.exp(a.data - m)
    s = z.sum(axis=axis, keepdims=True)
    out = (np.log(s) + m).squeeze(axis)
    weights = z / s

    def backward(g):
        return (weights * np.expand_dims(g, axis),)

    return _result(out, (a,), backward, "logsumexp")


def cdist(x, y) -> Tensor:
    """Pairwise Euclidean distances between the rows of ``x`` (n×d) and ``y`` (m×d).

    The subgradient 0 is used where two points coincide.
    """
    x, y = _t(x), _t(y)
    if x.data.ndim != 2 or y.data.ndim != 2 or x.data.shape[1] != y.data.shape[1]:
        raise ShapeError(f"cdist: point sets {x.shape} and {y.shape} are incompatible")
    diff = x.data[:, None, :] - y.data[None, :, :]
    dist = np.sqrt((diff * diff).sum(axis=2))

    def backward(g):
        safe = np.where(dist > 0, dist, 1.0)
        coef = np.where(dist > 0, g / safe, 0.0)[:, :, None] * diff
        return (coef.sum(axis=1) if x.requires_grad else None,
                -coef.sum(axis=0) if y.requires_grad else None)

    return _result(dist, (x, y), backward, "cdist")


# ---------------------------------------------------------- gradient checks


def numerical_gradient(f: Callable[[], float], param: Tensor, eps: float = 1e-5) -> np.ndarray:
    """Central finite differences of the scalar ``f()`` w.r.t. ``param.data`` (perturbed in place)."""
    grad = np.zeros_like(param.data)
    flat = param.data.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + eps
        fp = f()
        flat[i] = orig - eps
        fm = f()
        flat[i] = orig
        gflat[i] = (fp - fm) / (2.0 * eps)
    return grad


def max_relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-5) -> float:
    """max_i |a_i - n_i| / max(|a_i|, |n_i|, floor); the floor absorbs round-off on near-zero entries."""
    a = np.asarray(analytic, dtype=np.float64)
    n = np.asarray(numeric, dtype=np.float64)
    denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)
    return float(np.max(np.abs(a - n) / denom)) if a.size else 0.0
