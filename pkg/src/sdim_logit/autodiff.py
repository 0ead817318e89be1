"""Minimal reverse-mode automatic differentiation over dense float64 arrays.

Every operation returns a new :class:`Tensor`. When at least one operand
requires a gradient, the result remembers its parents and a closure mapping
the upstream gradient to one gradient per parent. :func:`backward` replays
those closures in exact reverse construction order.

Broadcasting is deliberately restricted: binary elementwise operations accept
operands of identical shape, or one 0-d operand (a Python number or a 0-d
tensor). Any other shape mixing goes through :func:`expand` explicitly.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np

__all__ = [
    "AutodiffError",
    "ShapeError",
    "DomainError",
    "NonFiniteError",
    "FrozenParameterError",
    "Tensor",
    "Graph",
    "tensor",
    "matmul",
    "add",
    "sub",
    "mul",
    "neg",
    "exp",
    "log",
    "square",
    "relu",
    "elu",
    "softplus",
    "clamp",
    "sum",
    "mean",
    "logsumexp",
    "reshape",
    "expand",
    "transpose",
    "concat",
    "take_rows",
    "pick",
    "backward",
    "zero_grad",
    "adam_step",
    "Adam",
]

#: Check every forward output and every gradient for NaN/inf.
CHECK_FINITE = True

_ids = itertools.count()


class AutodiffError(Exception):
    pass


class ShapeError(AutodiffError, ValueError):
    pass


class DomainError(AutodiffError, ValueError):
    pass


class NonFiniteError(AutodiffError, FloatingPointError):
    pass


class FrozenParameterError(AutodiffError, RuntimeError):
    pass


class Tensor:
    """Dense real array that can take part in a differentiation graph.

    ``grad`` accumulates across repeated :func:`backward` calls until
    :func:`zero_grad` (or ``t.grad = None``) resets it.
    """

    __slots__ = ("data", "grad", "requires_grad", "op", "_parents", "_backward", "_id")

    def __init__(self, data, requires_grad: bool = False, op: str = "leaf"):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.requires_grad = bool(requires_grad)
        self.op = op
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable[[np.ndarray], Sequence[np.ndarray | None]] | None = None
        self._id = next(_ids)

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> Tensor:
        return Tensor(self.data.copy())

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, op={self.op!r}, requires_grad={self.requires_grad})"

    def backward(self) -> dict[Tensor, np.ndarray]:
        return backward(self)

    __array_priority__ = 1000

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
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    @property
    def T(self) -> Tensor:
        return transpose(self)


def tensor(data, requires_grad: bool = False) -> Tensor:
    return Tensor(data, requires_grad=requires_grad)


def _lift(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _check(arr: np.ndarray, what: str) -> None:
    # a NaN/inf anywhere poisons the sum; only on a hit pay for the full scan
    if CHECK_FINITE and not np.isfinite(np.add.reduce(arr, axis=None)):
        if not np.all(np.isfinite(arr)):
            raise NonFiniteError(f"non-finite values produced by {what}")


def _node(data: np.ndarray, parents: tuple[Tensor, ...], grad_fn, op: str) -> Tensor:
    _check(data, op)
    out = Tensor(data, op=op)
    if any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = parents
        out._backward = grad_fn
    return out


# ---------------------------------------------------------------------------
# linear algebra


def matmul(a: Tensor, b: Tensor) -> Tensor:
    a, b = _lift(a), _lift(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: cannot multiply {a.shape} by {b.shape}")
    av, bv = a.data, b.data

    def grad_fn(g):
        return g @ bv.T, av.T @ g

    return _node(av @ bv, (a, b), grad_fn, "matmul")


def transpose(a: Tensor) -> Tensor:
    if a.ndim != 2:
        raise ShapeError(f"transpose expects a 2-d tensor, got {a.shape}")
    return _node(a.data.T.copy(), (a,), lambda g: (g.T,), "transpose")


# ---------------------------------------------------------------------------
# elementwise


def _binary(a, b, op: str):
    a, b = _lift(a), _lift(b)
    if a.shape == b.shape:
        return a, b, None
    if a.ndim == 0 or b.ndim == 0:
        return a, b, b.shape if a.ndim == 0 else a.shape
    raise ShapeError(f"{op}: operand shapes {a.shape} and {b.shape} differ; use expand()")


def _unbroadcast(g: np.ndarray, t: Tensor) -> np.ndarray:
    # a 0-d operand received the full-shape gradient; fold it back
    if t.ndim == 0 and g.ndim != 0:
        return np.asarray(g.sum())
    return g


def add(a, b) -> Tensor:
    a, b, _ = _binary(a, b, "add")

    def grad_fn(g):
        return _unbroadcast(g, a), _unbroadcast(g, b)

    return _node(a.data + b.data, (a, b), grad_fn, "add")


def sub(a, b) -> Tensor:
    a, b, _ = _binary(a, b, "sub")

    def grad_fn(g):
        return _unbroadcast(g, a), _unbroadcast(-g, b)

    return _node(a.data - b.data, (a, b), grad_fn, "sub")


def mul(a, b) -> Tensor:
    a, b, _ = _binary(a, b, "mul")
    av, bv = a.data, b.data

    def grad_fn(g):
        return _unbroadcast(g * bv, a), _unbroadcast(g * av, b)

    return _node(av * bv, (a, b), grad_fn, "mul")


def neg(a) -> Tensor:
    a = _lift(a)
    return _node(-a.data, (a,), lambda g: (-g,), "neg")


def exp(a) -> Tensor:
    a = _lift(a)
    with np.errstate(over="ignore"):
        out = np.exp(a.data)
    return _node(out, (a,), lambda g: (g * out,), "exp")


def log(a) -> Tensor:
    a = _lift(a)
    if np.any(a.data <= 0):
        raise DomainError(f"log of non-positive value (min {a.data.min()!r})")
    av = a.data
    return _node(np.log(av), (a,), lambda g: (g / av,), "log")


def square(a) -> Tensor:
    a = _lift(a)
    av = a.data
    return _node(av * av, (a,), lambda g: (2.0 * av * g,), "square")


def relu(a) -> Tensor:
    a = _lift(a)
    mask = a.data > 0
    return _node(np.where(mask, a.data, 0.0), (a,), lambda g: (g * mask,), "relu")


def elu(a, alpha: float = 1.0) -> Tensor:
    a = _lift(a)
    av = a.data
    neg_part = alpha * np.expm1(np.minimum(av, 0.0))
    out = np.maximum(av, 0.0) + neg_part

    def grad_fn(g):
        # 1 on the positive side, alpha * e^z on the negative side
        slope = neg_part + alpha
        if alpha != 1.0:
            slope = np.where(av > 0, 1.0, slope)
        return (g * slope,)

    return _node(out, (a,), grad_fn, "elu")


def softplus(a) -> Tensor:
    """``log(1 + e^z)`` as ``max(z, 0) + log1p(e^-|z|)``."""
    a = _lift(a)
    av = a.data
    out = np.maximum(av, 0.0) + np.log1p(np.exp(-np.abs(av)))

    def grad_fn(g):
        # logistic sigmoid, evaluated on the non-overflowing branch
        e = np.exp(-np.abs(av))
        sig = np.where(av >= 0, 1.0 / (1.0 + e), e / (1.0 + e))
        return (g * sig,)

    return _node(out, (a,), grad_fn, "softplus")


def clamp(a, lo: float, hi: float) -> Tensor:
    a = _lift(a)
    if lo > hi:
        raise DomainError(f"clamp: lo={lo} > hi={hi}")
    av = a.data
    inside = (av >= lo) & (av <= hi)
    return _node(np.clip(av, lo, hi), (a,), lambda g: (g * inside,), "clamp")


# ---------------------------------------------------------------------------
# reductions


def _axis_check(a: Tensor, axis) -> None:
    if axis is None:
        if a.size == 0:
            raise ShapeError("reduction over an empty tensor")
        return
    if not -a.ndim <= axis < a.ndim:
        raise ShapeError(f"axis {axis} invalid for shape {a.shape}")
    if a.shape[axis] == 0:
        raise ShapeError(f"reduction over empty axis {axis} of shape {a.shape}")


def _regrow(g: np.ndarray, a: Tensor, axis, keepdims: bool) -> np.ndarray:
    if axis is not None and not keepdims:
        g = np.expand_dims(g, axis)
    return np.broadcast_to(g, a.shape)


def sum(a, axis: int | None = None, keepdims: bool = False) -> Tensor:  # noqa: A001
    a = _lift(a)
    _axis_check(a, axis)

    def grad_fn(g):
        return (_regrow(g, a, axis, keepdims),)

    return _node(np.sum(a.data, axis=axis, keepdims=keepdims), (a,), grad_fn, "sum")


def mean(a, axis: int | None = None, keepdims: bool = False) -> Tensor:
    a = _lift(a)
    _axis_check(a, axis)
    n = a.size if axis is None else a.shape[axis]

    def grad_fn(g):
        return (_regrow(g, a, axis, keepdims) / n,)

    return _node(np.mean(a.data, axis=axis, keepdims=keepdims), (a,), grad_fn, "mean")


def logsumexp(a, axis: int | None = None, keepdims: bool = False) -> Tensor:
    a = _lift(a)
    _axis_check(a, axis)
    av = a.data
    shift = np.max(av, axis=axis, keepdims=True)
    kept = shift + np.log(np.sum(np.exp(av - shift), axis=axis, keepdims=True))
    if keepdims:
        out = kept
    elif axis is None:
        out = kept.reshape(())
    else:
        out = np.squeeze(kept, axis=axis)
    soft = np.exp(av - kept)

    def grad_fn(g):
        return (soft * _regrow(g, a, axis, keepdims),)

    return _node(out, (a,), grad_fn, "logsumexp")


# ---------------------------------------------------------------------------
# shape manipulation and indexing


def reshape(a, shape: Sequence[int]) -> Tensor:
    a = _lift(a)
    shape = tuple(shape)
    if int(np.prod(shape)) != a.size:
        raise ShapeError(f"reshape: cannot view {a.shape} as {shape}")
    orig = a.shape
    return _node(a.data.reshape(shape), (a,), lambda g: (g.reshape(orig),), "reshape")


def expand(a, shape: Sequence[int]) -> Tensor:
    """Repeat size-1 axes of ``a`` to reach ``shape`` (same rank required)."""
    a = _lift(a)
    shape = tuple(shape)
    if len(shape) != a.ndim or any(s != t and s != 1 for s, t in zip(a.shape, shape)):
        raise ShapeError(f"expand: cannot expand {a.shape} to {shape}")
    axes = tuple(i for i, (s, t) in enumerate(zip(a.shape, shape)) if s != t)

    def grad_fn(g):
        return (g.sum(axis=axes, keepdims=True) if axes else g,)

    return _node(np.broadcast_to(a.data, shape), (a,), grad_fn, "expand")


def concat(tensors: Sequence[Tensor], axis: int = -1) -> Tensor:
    tensors = tuple(_lift(t) for t in tensors)
    if not tensors:
        raise ShapeError("concat of nothing")
    try:
        out = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError as exc:
        raise ShapeError(f"concat: {[t.shape for t in tensors]}: {exc}") from None
    splits = np.cumsum([t.shape[axis] for t in tensors])[:-1]

    def grad_fn(g):
        return tuple(np.split(g, splits, axis=axis))

    return _node(out, tensors, grad_fn, "concat")


def take_rows(a, index) -> Tensor:
    """Gather rows ``a[index]``; repeated indices accumulate gradient."""
    a = _lift(a)
    index = np.asarray(index, dtype=np.intp)
    if index.ndim != 1:
        raise ShapeError("take_rows expects a 1-d index array")
    if index.size and (index.min() < -a.shape[0] or index.max() >= a.shape[0]):
        raise ShapeError(f"take_rows: index out of range for {a.shape[0]} rows")

    def grad_fn(g):
        out = np.zeros_like(a.data)
        np.add.at(out, index, g)
        return (out,)

    return _node(a.data[index], (a,), grad_fn, "take_rows")


def pick(a, index) -> Tensor:
    """Select one column per row: ``out[i] = a[i, index[i]]``."""
    a = _lift(a)
    index = np.asarray(index, dtype=np.intp)
    if a.ndim != 2 or index.shape != (a.shape[0],):
        raise ShapeError(f"pick: need (n, m) tensor and n indices, got {a.shape} / {index.shape}")
    if index.size and (index.min() < 0 or index.max() >= a.shape[1]):
        raise ShapeError(f"pick: column index out of range for {a.shape[1]} columns")
    rows = np.arange(a.shape[0])

    def grad_fn(g):
        out = np.zeros_like(a.data)
        out[rows, index] = g
        return (out,)

    return _node(a.data[rows, index], (a,), grad_fn, "pick")


# ---------------------------------------------------------------------------
# backward


@dataclass
class Graph:
    """Ancestors of a root tensor, in construction order."""

    nodes: list[Tensor] = field(default_factory=list)

    @classmethod
    def trace(cls, root: Tensor) -> Graph:
        seen: set[int] = set()
        found: list[Tensor] = []
        stack = [root]
        while stack:
            t = stack.pop()
            if t._id in seen or not t.requires_grad:
                continue
            seen.add(t._id)
            found.append(t)
            stack.extend(t._parents)
        found.sort(key=lambda t: t._id)
        return cls(found)

    def leaves(self) -> list[Tensor]:
        return [t for t in self.nodes if t._backward is None]


def backward(root: Tensor, graph: Graph | None = None) -> dict[Tensor, np.ndarray]:
    """Propagate d(root)/d(node) to every node; accumulate into leaf ``.grad``.

    Returns the gradient of every node reached, keyed by tensor.
    """
    if root.ndim != 0:
        raise ShapeError(f"backward needs a scalar root, got shape {root.shape}")
    if not root.requires_grad:
        raise AutodiffError("root does not depend on any tensor requiring grad")
    graph = graph or Graph.trace(root)
    grads: dict[int, np.ndarray] = {root._id: np.ones(())}
    result: dict[Tensor, np.ndarray] = {}
    for node in reversed(graph.nodes):
        g = grads.pop(node._id, None)
        if g is None:
            continue
        result[node] = g
        if node._backward is None:
            _check(g, "backward")
            node.grad = g.copy() if node.grad is None else node.grad + g
            continue
        for parent, pg in zip(node._parents, node._backward(g)):
            if pg is None or not parent.requires_grad:
                continue
            prev = grads.get(parent._id)
            grads[parent._id] = pg if prev is None else prev + pg
    return result


def zero_grad(params: Iterable[Tensor]) -> None:
    for p in params:
        p.grad = None


# ---------------------------------------------------------------------------
# optimisation


def adam_step(
    params: Sequence[Tensor],
    grads: Sequence[np.ndarray],
    state: dict,
    lr: float = 1e-3,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps_hat: float = 1e-8,
) -> tuple[Sequence[Tensor], dict]:
    """One bias-corrected Adam update, applied in place.

    ``state`` holds ``t`` (step count) and per-parameter ``m``/``v`` moments;
    an empty dict is initialised on first use.
    """
    if len(params) != len(grads):
        raise ShapeError(f"{len(params)} parameters but {len(grads)} gradients")
    if not state:
        state.update(t=0, m=[np.zeros_like(p.data) for p in params],
                     v=[np.zeros_like(p.data) for p in params])
    for p, g, m in zip(params, grads, state["m"]):
        if g.shape != p.shape or m.shape != p.shape:
            raise ShapeError(f"adam: parameter {p.shape}, grad {g.shape}, moment {m.shape}")
        if not p.data.flags.writeable:
            raise FrozenParameterError("attempt to update a frozen parameter")
    state["t"] += 1
    t = state["t"]
    c1 = 1.0 - beta1**t
    c2 = 1.0 - beta2**t
    for p, g, m, v in zip(params, grads, state["m"], state["v"]):
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * g * g
        p.data -= lr * (m / c1) / (np.sqrt(v / c2) + eps_hat)
    return params, state


class Adam:
    def __init__(self, params: Sequence[Tensor], lr: float = 1e-3,
                 betas: tuple[float, float] = (0.9, 0.999), eps: float = 1e-8):
        self.params = list(params)
        self.lr = lr
        self.betas = betas
        self.eps = eps
        self.state: dict = {}

    def step(self) -> None:
        grads = [p.grad if p.grad is not None else np.zeros_like(p.data) for p in self.params]
        adam_step(self.params, grads, self.state, self.lr, *self.betas, self.eps)

    def zero_grad(self) -> None:
        zero_grad(self.params)
