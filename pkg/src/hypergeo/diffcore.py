"""Minimal reverse-mode automatic differentiation over dense float64 arrays.

Operations executed inside a :class:`Tape` context are recorded in creation
order, which is already a topological order, and :meth:`Tape.backward`
replays them in reverse. Outside a tape the same functions just compute
values, so one code path serves training and inference.

Binary primitives follow numpy broadcasting; gradients are summed back to
each input's shape.
"""

from __future__ import annotations

import threading
from contextlib import contextmanager
from dataclasses import dataclass, field
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np

from .errors import InvalidInputError, NumericalFaultError, ShapeError, TapeError

_local = threading.local()


def _tape_stack() -> list:
    if not hasattr(_local, "tapes"):
        _local.tapes = []
    return _local.tapes


def active_tape() -> "Tape | None":
    stack = _tape_stack()
    return stack[-1] if stack else None


class Tensor:
    """Array value with an optional gradient slot."""

    __array_priority__ = 100
    __slots__ = ("value", "requires_grad", "grad", "name", "op", "_parents", "_vjp", "_tape")

    def __init__(self, value, requires_grad: bool = False, name: str | None = None):
        self.value = np.array(value, dtype=np.float64)
        self.requires_grad = requires_grad
        self.grad = np.zeros_like(self.value) if requires_grad else None
        self.name = name
        self.op = "leaf"
        self._parents: tuple = ()
        self._vjp = None
        self._tape = None

    @property
    def shape(self) -> tuple:
        return self.value.shape

    @property
    def ndim(self) -> int:
        return self.value.ndim

    @property
    def is_leaf(self) -> bool:
        return self._tape is None

    def item(self) -> float:
        return float(self.value)

    def numpy(self) -> np.ndarray:
        return self.value

    def __repr__(self):
        return f"Tensor(op={self.op}, shape={self.shape}, requires_grad={self.requires_grad})"

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

    @property
    def T(self):
        return transpose(self)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


class Tape:
    """Ordered record of the primitive operations of one forward pass."""

    def __init__(self):
        self.nodes: list[Tensor] = []
        self.consumed = False

    def __enter__(self) -> "Tape":
        _tape_stack().append(self)
        return self

    def __exit__(self, *exc):
        _tape_stack().remove(self)
        return False

    def record(self, node: Tensor) -> None:
        node._tape = self
        self.nodes.append(node)

    def reset(self) -> None:
        for node in self.nodes:
            node._tape = None
        self.nodes = []
        self.consumed = False

    def backward(self, loss: Tensor) -> None:
        if loss.value.size != 1:
            raise ShapeError(f"backward needs a scalar loss, got shape {loss.shape}")
        if loss._tape is not self:
            raise TapeError("loss was not produced on this tape")
        if self.consumed:
            raise TapeError("tape already consumed by a backward pass; reset it first")

        for node in self.nodes:
            for parent in node._parents:
                if parent.requires_grad and parent.is_leaf:
                    parent.grad = np.zeros_like(parent.value)

        pending = {id(loss): np.ones_like(loss.value)}
        for node in reversed(self.nodes):
            g = pending.pop(id(node), None)
            if g is None:
                continue
            node.grad = g
            for parent, pg in zip(node._parents, node._vjp(g)):
                if pg is None or not parent.requires_grad:
                    continue
                pg = _unbroadcast(pg, parent.shape)
                if not np.all(np.isfinite(pg)):
                    raise NumericalFaultError(f"{node.op} (backward)")
                if parent.is_leaf:
                    parent.grad = parent.grad + pg
                else:
                    prev = pending.get(id(parent))
                    pending[id(parent)] = pg if prev is None else prev + pg
        self.consumed = True


def backward(loss: Tensor) -> None:
    """Populate ``.grad`` of every leaf reachable from ``loss``."""
    if not isinstance(loss, Tensor) or loss._tape is None:
        raise TapeError("loss is detached: it was not computed inside a Tape")
    loss._tape.backward(loss)


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


def _make(value: np.ndarray, op: str, parents: Sequence[Tensor], vjp: Callable) -> Tensor:
    if not np.all(np.isfinite(value)):
        raise NumericalFaultError(op)
    out = Tensor.__new__(Tensor)
    out.value = value
    out.name = None
    out.op = op
    out.grad = None
    out._tape = None
    tape = active_tape()
    if tape is not None and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._vjp = vjp
        tape.record(out)
    else:
        out.requires_grad = False
        out._parents = ()
        out._vjp = None
    return out


def _check_broadcast(op: str, a: Tensor, b: Tensor) -> None:
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError as exc:
        raise ShapeError(f"{op}: incompatible shapes {a.shape} and {b.shape}") from exc


# ---------------------------------------------------------------- arithmetic


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast("add", a, b)
    return _make(a.value + b.value, "add", (a, b), lambda g: (g, g))


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast("sub", a, b)
    return _make(a.value - b.value, "sub", (a, b), lambda g: (g, -g))


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast("mul", a, b)
    av, bv = a.value, b.value
    return _make(av * bv, "mul", (a, b), lambda g: (g * bv, g * av))


hadamard = mul


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast("div", a, b)
    av, bv = a.value, b.value
    out = av / bv
    return _make(out, "div", (a, b), lambda g: (g / bv, -g * out / bv))


def neg(a) -> Tensor:
    a = as_tensor(a)
    return _make(-a.value, "neg", (a,), lambda g: (-g,))


# ---------------------------------------------------------------- linear algebra


def _swap(x: np.ndarray) -> np.ndarray:
    return np.swapaxes(x, -1, -2)


def matmul(a, b) -> Tensor:
    """Matrix product over the last two axes; leading axes broadcast."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul: incompatible shapes {a.shape} and {b.shape}")
    av, bv = a.value, b.value
    out = np.matmul(av, bv)
    _count_madds(out.size * a.shape[-1])
    return _make(out, "matmul", (a, b), lambda g: (np.matmul(g, _swap(bv)), np.matmul(_swap(av), g)))


def transpose(a) -> Tensor:
    """Swap the last two axes."""
    a = as_tensor(a)
    if a.ndim < 2:
        raise ShapeError("transpose needs at least two axes")
    return _make(_swap(a.value), "transpose", (a,), lambda g: (_swap(g),))


def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    src = a.shape
    try:
        out = a.value.reshape(shape)
    except ValueError as exc:
        raise ShapeError(f"reshape: cannot view {src} as {shape}") from exc
    return _make(out, "reshape", (a,), lambda g: (g.reshape(src),))


def concat(tensors: Sequence, axis: int = -1) -> Tensor:
    ts = [as_tensor(t) for t in tensors]
    try:
        out = np.concatenate([t.value for t in ts], axis=axis)
    except ValueError as exc:
        raise ShapeError(f"concat: {exc}") from exc
    sizes = np.cumsum([t.shape[axis] for t in ts])[:-1]
    return _make(out, "concat", ts, lambda g: tuple(np.split(g, sizes, axis=axis)))


# ---------------------------------------------------------------- reductions


def sum_pool(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    src = a.shape

    def vjp(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, src).copy(),)

    return _make(np.sum(a.value, axis=axis, keepdims=keepdims), "sum_pool", (a,), vjp)


def l2_norm(a, axis: int = -1, keepdims: bool = True) -> Tensor:
    """Euclidean norm; the gradient at an exactly zero vector is taken as 0."""
    a = as_tensor(a)
    av = a.value
    n = np.sqrt(np.sum(av * av, axis=axis, keepdims=True))

    def vjp(g):
        if not keepdims:
            g = np.expand_dims(g, axis)
        safe = np.where(n > 0.0, n, 1.0)
        return (np.where(n > 0.0, g * av / safe, 0.0),)

    return _make(n if keepdims else np.squeeze(n, axis=axis), "l2_norm", (a,), vjp)


def softmax(a, axis: int = -1) -> Tensor:
    a = as_tensor(a)
    z = a.value - np.max(a.value, axis=axis, keepdims=True)
    e = np.exp(z)
    s = e / np.sum(e, axis=axis, keepdims=True)
    return _make(s, "softmax", (a,), lambda g: (s * (g - np.sum(g * s, axis=axis, keepdims=True)),))


# ---------------------------------------------------------------- elementwise


def sqrt(a) -> Tensor:
    a = as_tensor(a)
    out = np.sqrt(a.value)
    return _make(out, "sqrt", (a,), lambda g: (0.5 * g / out,))


def tanh(a) -> Tensor:
    a = as_tensor(a)
    t = np.tanh(a.value)
    return _make(t, "tanh", (a,), lambda g: (g * (1.0 - t * t),))


def arctanh(a) -> Tensor:
    """Inverse hyperbolic tangent; callers clamp the input into (-1, 1) first."""
    a = as_tensor(a)
    av = a.value
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.arctanh(av)
    return _make(out, "arctanh", (a,), lambda g: (g / (1.0 - av * av),))


def sigmoid(a) -> Tensor:
    a = as_tensor(a)
    s = 0.5 * (1.0 + np.tanh(0.5 * a.value))
    return _make(s, "sigmoid", (a,), lambda g: (g * s * (1.0 - s),))


def log(a) -> Tensor:
    a = as_tensor(a)
    av = a.value
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.log(av)
    return _make(out, "log", (a,), lambda g: (g / av,))


def clamp(a, lo=None, hi=None) -> Tensor:
    """Clip to ``[lo, hi]``; gradient passes through inside, zero outside."""
    a = as_tensor(a)
    av = a.value
    inside = np.ones(av.shape, dtype=bool)
    out = av
    if lo is not None:
        inside &= av >= lo
        out = np.maximum(out, lo)
    if hi is not None:
        inside &= av <= hi
        out = np.minimum(out, hi)
    return _make(np.array(out, dtype=np.float64), "clamp", (a,), lambda g: (np.where(inside, g, 0.0),))


# ---------------------------------------------------------------- instrumentation


@dataclass
class FlopCounter:
    """Multiply-adds performed by :func:`matmul` while the counter is active."""

    madds: int = 0


@contextmanager
def count_flops():
    prev = getattr(_local, "counter", None)
    counter = FlopCounter()
    _local.counter = counter
    try:
        yield counter
    finally:
        _local.counter = prev


def _count_madds(n: int) -> None:
    counter = getattr(_local, "counter", None)
    if counter is not None:
        counter.madds += int(n)


# ---------------------------------------------------------------- optimisation


class SGD:
    """Gradient descent with heavy-ball momentum.

    ``v <- momentum * v + grad``; ``p <- p - lr * v``. Gradients are zeroed
    after every step.
    """

    def __init__(self, params: Mapping[str, Tensor] | Iterable[Tensor], lr: float = 1e-2,
                 momentum: float = 0.9):
        if not lr > 0.0:
            raise InvalidInputError(f"learning rate must be > 0, got {lr}")
        if not 0.0 <= momentum < 1.0:
            raise InvalidInputError(f"momentum must lie in [0, 1), got {momentum}")
        self.params = list(params.values()) if isinstance(params, Mapping) else list(params)
        self.lr = float(lr)
        self.momentum = float(momentum)
        self._velocity = [np.zeros_like(p.value) for p in self.params]

    def step(self) -> None:
        for p, v in zip(self.params, self._velocity):
            if p.grad is None:
                continue
            v *= self.momentum
            v += p.grad
            p.value = p.value - self.lr * v
        self.zero_grad()

    def zero_grad(self) -> None:
        for p in self.params:
            if p.requires_grad:
                p.grad = np.zeros_like(p.value)


# ---------------------------------------------------------------- gradient checking


@dataclass
class GradCheckReport:
    max_rel_error: float
    per_param: dict = field(default_factory=dict)
    checked: int = 0

    def passed(self, tol: float) -> bool:
        return self.max_rel_error < tol


def relative_error(analytic, numeric, floor: float = 1e-6):
    """``|a - b| / max(|a|, |b|, floor)``.

    The floor keeps components whose true value is at the level of
    floating-point noise from dominating the maximum.
    """
    analytic = np.asarray(analytic)
    numeric = np.asarray(numeric)
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    return np.abs(analytic - numeric) / denom


def gradcheck(fn: Callable[[], Tensor], params: Mapping[str, Tensor], h: float = 1e-5,
              coords_per_param: int | None = 8, seed: int = 0,
              floor: float = 1e-6) -> GradCheckReport:
    """Compare tape gradients of ``fn()`` with central finite differences.

    ``fn`` must rebuild the scalar output from the current parameter values.
    Up to ``coords_per_param`` randomly chosen coordinates of each parameter
    are probed (all of them when ``None``).
    """
    with Tape() as tape:
        loss = fn()
    tape.backward(loss)
    analytic = {k: p.grad.copy() for k, p in params.items()}

    rng = np.random.default_rng(seed)
    report = GradCheckReport(max_rel_error=0.0)
    for name, p in params.items():
        size = p.value.size
        idx = np.arange(size)
        if coords_per_param is not None and size > coords_per_param:
            idx = rng.choice(size, size=coords_per_param, replace=False)
        numeric = np.empty(idx.size)
        for j, i in enumerate(idx):
            orig = p.value.flat[i]
            p.value.flat[i] = orig + h
            f_plus = fn().item()
            p.value.flat[i] = orig - h
            f_minus = fn().item()
            p.value.flat[i] = orig
            numeric[j] = (f_plus - f_minus) / (2.0 * h)
        err = relative_error(analytic[name].reshape(-1)[idx], numeric, floor)
        worst = float(err.max()) if err.size else 0.0
        report.per_param[name] = worst
        report.max_rel_error = max(report.max_rel_error, worst)
        report.checked += idx.size
    for p in params.values():
        p.grad = np.zeros_like(p.value)
    return report
