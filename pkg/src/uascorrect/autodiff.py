"""Reverse-mode automatic differentiation over numpy arrays.

Each ``Tensor`` produced by an operation remembers its parents and a closure
mapping the output gradient to parent gradients. ``Tensor.backward`` walks the
graph once in reverse topological order.
"""

from __future__ import annotations

import contextlib
from typing import Callable, Iterable, Sequence

import numpy as np

from .errors import ShapeError, StateError

EPS = 1e-7
_EXP_LIMIT = 80.0

_grad_enabled = True


@contextlib.contextmanager
def no_grad():
    """Run forward ops without recording a graph."""
    global _grad_enabled
    previous = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = previous


def _as_array(data, dtype=None) -> np.ndarray:
    if isinstance(data, Tensor):
        return data.data
    arr = np.asarray(data)
    if dtype is not None:
        return arr.astype(dtype, copy=False)
    if arr.dtype == np.float64 or arr.dtype == np.float32:
        return arr
    return arr.astype(np.float32)


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward", "op", "_consumed")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        self.data = _as_array(data, dtype)
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable[[np.ndarray], Sequence[np.ndarray | None]] | None = None
        self.op = "leaf"
        self._consumed = False

    @classmethod
    def _make(cls, data: np.ndarray, parents: tuple["Tensor", ...], backward, op: str) -> "Tensor":
        out = cls(data)
        if _grad_enabled and any(p.requires_grad for p in parents):
            out.requires_grad = True
            out._parents = parents
            out._backward = backward
            out.op = op
        return out

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def is_leaf(self) -> bool:
        return self._backward is None

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, op={self.op}, requires_grad={self.requires_grad})"

    # operator sugar
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(_lift(other, self), self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(self, other)

    def __truediv__(self, other):
        return div(self, other)

    def __neg__(self):
        return mul(self, -1.0)

    def backward(self) -> None:
        backward(self)


def _lift(value, like: Tensor) -> Tensor:
    if isinstance(value, Tensor):
        return value
    return Tensor(np.asarray(value, dtype=like.dtype))


def _binary_operands(a, b) -> tuple[Tensor, Tensor]:
    if not isinstance(a, Tensor):
        a = _lift(a, b) if isinstance(b, Tensor) else Tensor(a)
    b = _lift(b, a)
    if b.data.ndim != 0 and a.data.ndim != 0 and a.shape != b.shape:
        raise ShapeError(f"operand shapes differ: {a.shape} vs {b.shape}")
    return a, b


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if grad.shape == shape:
        return grad
    # scalar operand
    return np.asarray(grad.sum(dtype=np.float64), dtype=grad.dtype).reshape(shape)


def _result_dtype(a: Tensor, b: Tensor):
    return np.result_type(a.dtype, b.dtype)


def add(a, b) -> Tensor:
    a, b = _binary_operands(a, b)
    dtype = _result_dtype(a, b)

    def grad_fn(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return Tensor._make((a.data + b.data).astype(dtype, copy=False), (a, b), grad_fn, "add")


def sub(a, b) -> Tensor:
    a, b = _binary_operands(a, b)
    dtype = _result_dtype(a, b)

    def grad_fn(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return Tensor._make((a.data - b.data).astype(dtype, copy=False), (a, b), grad_fn, "sub")


def mul(a, b) -> Tensor:
    a, b = _binary_operands(a, b)
    dtype = _result_dtype(a, b)

    def grad_fn(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return Tensor._make((a.data * b.data).astype(dtype, copy=False), (a, b), grad_fn, "mul")


def _clamp_denominator(d: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    small = np.abs(d) < EPS
    sign = np.where(d < 0, -1.0, 1.0).astype(d.dtype)
    return np.where(small, sign * d.dtype.type(EPS), d), small


def div(a, b) -> Tensor:
    """a / b with the denominator's magnitude clamped to at least 1e-7 (zero counts as positive)."""
    a, b = _binary_operands(a, b)
    dtype = _result_dtype(a, b)
    denom, small = _clamp_denominator(b.data.astype(dtype, copy=False))
    out = a.data / denom

    def grad_fn(g):
        ga = _unbroadcast(g / denom, a.shape)
        gb = np.where(small, 0.0, -g * out / denom).astype(g.dtype, copy=False)
        return ga, _unbroadcast(gb, b.shape)

    return Tensor._make(out.astype(dtype, copy=False), (a, b), grad_fn, "div")


def log(a: Tensor) -> Tensor:
    """Natural log with the argument clamped into [1e-7, 1]."""
    x = a.data
    inside = (x >= EPS) & (x <= 1.0)
    xc = np.clip(x, EPS, 1.0)

    def grad_fn(g):
        return (np.where(inside, g / xc, 0.0).astype(g.dtype, copy=False),)

    return Tensor._make(np.log(xc).astype(x.dtype, copy=False), (a,), grad_fn, "log")


def exp(a: Tensor) -> Tensor:
    out = np.exp(np.minimum(a.data, _EXP_LIMIT))

    def grad_fn(g):
        return (np.where(a.data <= _EXP_LIMIT, g * out, 0.0).astype(g.dtype, copy=False),)

    return Tensor._make(out, (a,), grad_fn, "exp")


def abs(a: Tensor) -> Tensor:  # noqa: A001 - mirrors numpy naming
    """|a| with subgradient 0 at 0."""

    def grad_fn(g):
        return (g * np.sign(a.data),)

    return Tensor._make(np.abs(a.data), (a,), grad_fn, "abs")


def clamp(a: Tensor, lo: float | None = None, hi: float | None = None) -> Tensor:
    """Clip into [lo, hi]; gradient passes where the input is inside the closed interval."""
    x = a.data
    out = np.clip(x, lo, hi)
    inside = np.ones(x.shape, dtype=bool)
    if lo is not None:
        inside &= x >= lo
    if hi is not None:
        inside &= x <= hi

    def grad_fn(g):
        return (np.where(inside, g, 0.0).astype(g.dtype, copy=False),)

    return Tensor._make(out.astype(x.dtype, copy=False), (a,), grad_fn, "clamp")


ELEMENTWISE = {
    "add": add,
    "sub": sub,
    "mul": mul,
    "div": div,
    "log": lambda a, b=None: log(a),
    "exp": lambda a, b=None: exp(a),
    "abs": lambda a, b=None: abs(a),
    "clamp": lambda a, b=(None, None): clamp(a, *b),
}


def elementwise(kind: str, a, b=None) -> Tensor:
    try:
        fn = ELEMENTWISE[kind]
    except KeyError:
        raise ValueError(f"unknown elementwise op {kind!r}") from None
    return fn(a, b) if b is not None else fn(a)


def sum(a: Tensor) -> Tensor:  # noqa: A001
    if a.size == 0:
        raise ShapeError("sum of an empty tensor")
    total = np.asarray(a.data.sum(dtype=np.float64), dtype=a.dtype)

    def grad_fn(g):
        return (np.full(a.shape, g, dtype=a.dtype),)

    return Tensor._make(total, (a,), grad_fn, "sum")


def mean(a: Tensor) -> Tensor:
    if a.size == 0:
        raise ShapeError("mean of an empty tensor")
    n = a.size
    value = np.asarray(a.data.sum(dtype=np.float64) / n, dtype=a.dtype)

    def grad_fn(g):
        return (np.full(a.shape, np.float64(g) / n, dtype=a.dtype),)

    return Tensor._make(value, (a,), grad_fn, "mean")


def reduce(kind: str, a: Tensor) -> Tensor:
    if kind == "sum":
        return sum(a)
    if kind == "mean":
        return mean(a)
    raise ValueError(f"unknown reduction {kind!r}")


def topological_order(root: Tensor) -> list[Tensor]:
    """Nodes reachable from ``root`` with every node after all of its inputs."""
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
        for parent in node._parents:
            if id(parent) not in seen:
                stack.append((parent, False))
    return order


def backward(loss: Tensor) -> None:
    """Populate ``.grad`` on every requires_grad leaf reachable from a scalar loss."""
    if loss.data.size != 1 or loss.data.ndim != 0:
        raise ShapeError(f"backward needs a scalar loss, got shape {loss.shape}")
    if loss._consumed:
        raise StateError("backward already ran on this graph")
    if not loss.requires_grad:
        raise StateError("loss does not depend on any tensor requiring grad")
    loss._consumed = True
    grads: dict[int, np.ndarray] = {id(loss): np.ones((), dtype=loss.dtype)}
    for node in reversed(topological_order(loss)):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node.is_leaf:
            if node.requires_grad:
                node.grad = g.copy() if node.grad is None else node.grad + g
            continue
        for parent, pg in zip(node._parents, node._backward(g)):
            if pg is None or not parent.requires_grad:
                continue
            key = id(parent)
            if key in grads:
                grads[key] = grads[key] + pg
            else:
                grads[key] = pg


class Optimizer:
    """Plain SGD or Adam over a fixed parameter list; zeroes gradients after each step."""

    def __init__(
        self,
        params: Iterable[Tensor],
        lr: float = 1e-3,
        kind: str = "adam",
        beta1: float = 0.9,
        beta2: float = 0.999,
        eps: float = 1e-8,
    ):
        if kind not in ("sgd", "adam"):
            raise ValueError(f"unknown optimizer {kind!r}")
        if lr <= 0:
            raise ValueError("learning rate must be positive")
        self.params = list(params)
        self.lr = lr
        self.kind = kind
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.t = 0
        self._m = [np.zeros_like(p.data) for p in self.params] if kind == "adam" else None
        self._v = [np.zeros_like(p.data) for p in self.params] if kind == "adam" else None

    def step(self) -> None:
        for i, p in enumerate(self.params):
            if p.grad is None:
                raise StateError(f"parameter {i} {p.shape} has no gradient")
        if self.kind == "sgd":
            for p in self.params:
                p.data -= p.dtype.type(self.lr) * p.grad
        else:
            self.t += 1
            c1 = 1.0 - self.beta1**self.t
            c2 = 1.0 - self.beta2**self.t
            for p, m, v in zip(self.params, self._m, self._v):
                g = p.grad
                m *= self.beta1
                m += (1.0 - self.beta1) * g
                v *= self.beta2
                v += (1.0 - self.beta2) * g * g
                update = (self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)).astype(p.dtype)
                p.data -= update
        self.zero_grad()

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None


def sgd_step(params: Iterable[Tensor], lr: float) -> None:
    """One stateless plain-SGD update; Adam needs ``Optimizer`` to carry its moments."""
    Optimizer(params, lr=lr, kind="sgd").step()


def numerical_gradient(fn: Callable[[], float], x: np.ndarray, h: float = 1e-3) -> np.ndarray:
    """Central finite differences of a scalar function of ``x`` (perturbed in place)."""
    grad = np.zeros(x.shape, dtype=np.float64)
    flat = x.reshape(-1)
    out = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        f_plus = float(fn())
        flat[i] = orig - h
        f_minus = float(fn())
        flat[i] = orig
        out[i] = (f_plus - f_minus) / (2.0 * h)
    return grad


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-6) -> float:
    """Largest elementwise |a - n| / max(|a|, |n|, floor)."""
    a = np.asarray(analytic, dtype=np.float64)
    n = np.asarray(numeric, dtype=np.float64)
    denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)
    return float(np.max(np.abs(a - n) / denom))
