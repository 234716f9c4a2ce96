from __future__ import annotations

import contextlib
import threading
from typing import Callable, Dict, Iterator, List, Optional, Sequence, Tuple, Union

import numpy as np

ArrayLike = Union["Tensor", np.ndarray, float, int]

PRECISIONS = {"float32": np.float32, "float64": np.float64}


class ShapeError(ValueError):
    """Raised when tensor shapes violate an operation's contract."""


class GradError(RuntimeError):
    pass


_precision = {"dtype": np.float32}
_grad_mode = threading.local()


def default_dtype() -> type:
    return _precision["dtype"]


def set_precision(name: str) -> None:
    if name not in PRECISIONS:
        raise ValueError(f"Unknown precision {name!r}, expected one of {sorted(PRECISIONS)}")
    _precision["dtype"] = PRECISIONS[name]


@contextlib.contextmanager
def precision(name: str) -> Iterator[None]:
    """
    Temporarily switch the dtype used for new tensors.
    float64 is what the gradient checks run in; training defaults to float32.
    """
    previous = _precision["dtype"]
    set_precision(name)
    try:
        yield
    finally:
        _precision["dtype"] = previous


def is_grad_enabled() -> bool:
    return getattr(_grad_mode, "enabled", True)


@contextlib.contextmanager
def no_grad() -> Iterator[None]:
    # thread-local so evaluation threads never disable recording for the learner
    previous = is_grad_enabled()
    _grad_mode.enabled = False
    try:
        yield
    finally:
        _grad_mode.enabled = previous


def _unbroadcast(grad: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, extent in enumerate(shape):
        if extent == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


class Tensor:
    """
    Dense array with an optional reverse-mode graph.

    A tensor records its parents and a backward closure only when gradient
    recording is enabled and at least one parent requires a gradient.
    """

    def __init__(
        self,
        data,
        requires_grad: bool = False,
        _parents: Tuple["Tensor", ...] = (),
        _backward: Optional[Callable[[np.ndarray], None]] = None,
    ):
        if isinstance(data, np.ndarray) and data.dtype in (np.float32, np.float64):
            self.data = data
        else:
            self.data = np.asarray(data, dtype=default_dtype())
        self.grad: Optional[np.ndarray] = None
        self.requires_grad = requires_grad
        self._parents = _parents
        self._backward = _backward

    # ---------------- plumbing ----------------
    @property
    def shape(self) -> Tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, dtype={self.data.dtype}, requires_grad={self.requires_grad})"

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item() needs a single-element tensor, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def detach(self) -> "Tensor":
        """Stop-gradient: same values, no history."""
        return Tensor(self.data)

    def _const(self, other: ArrayLike) -> "Tensor":
        if isinstance(other, Tensor):
            return other
        return Tensor(np.asarray(other, dtype=self.data.dtype))

    def _accumulate(self, grad: np.ndarray) -> None:
        grad = _unbroadcast(grad, self.data.shape)
        if self.grad is None:
            self.grad = np.array(grad, dtype=self.data.dtype, copy=True)
        else:
            self.grad = self.grad + grad

    @staticmethod
    def _result(data: np.ndarray, parents: Tuple["Tensor", ...], backward: Callable[[np.ndarray], None]) -> "Tensor":
        if is_grad_enabled() and any(p.requires_grad for p in parents):
            return Tensor(data, True, parents, backward)
        return Tensor(data)

    # ---------------- arithmetic ----------------
    def __add__(self, other: ArrayLike) -> "Tensor":
        other = self._const(other)
        a, b = self, other

        def _backward(g: np.ndarray) -> None:
            if a.requires_grad:
                a._accumulate(g)
            if b.requires_grad:
                b._accumulate(g)

        return Tensor._result(a.data + b.data, (a, b), _backward)

    __radd__ = __add__

    def __neg__(self) -> "Tensor":
        a = self

        def _backward(g: np.ndarray) -> None:
            a._accumulate(-g)

        return Tensor._result(-a.data, (a,), _backward)

    def __sub__(self, other: ArrayLike) -> "Tensor":
        other = self._const(other)
        a, b = self, other

        def _backward(g: np.ndarray) -> None:
            if a.requires_grad:
                a._accumulate(g)
            if b.requires_grad:
                b._accumulate(-g)

        return Tensor._result(a.data - b.data, (a, b), _backward)

    def __rsub__(self, other: ArrayLike) -> "Tensor":
        return self._const(other) - self

    def __mul__(self, other: ArrayLike) -> "Tensor":
        other = self._const(other)
        a, b = self, other

        def _backward(g: np.ndarray) -> None:
            if a.requires_grad:
                a._accumulate(g * b.data)
            if b.requires_grad:
                b._accumulate(g * a.data)

        return Tensor._result(a.data * b.data, (a, b), _backward)

    __rmul__ = __mul__

    def __truediv__(self, other: ArrayLike) -> "Tensor":
        other = self._const(other)
        a, b = self, other

        def _backward(g: np.ndarray) -> None:
            if a.requires_grad:
                a._accumulate(g / b.data)
            if b.requires_grad:
                b._accumulate(-g * a.data / (b.data * b.data))

        return Tensor._result(a.data / b.data, (a, b), _backward)

    def __rtruediv__(self, other: ArrayLike) -> "Tensor":
        return self._const(other) / self

    def __pow__(self, exponent: float) -> "Tensor":
        a = self
        exponent = float(exponent)

        def _backward(g: np.ndarray) -> None:
            a._accumulate(g * exponent * a.data ** (exponent - 1.0))

        return Tensor._result(a.data ** exponent, (a,), _backward)

    def __matmul__(self, other: "Tensor") -> "Tensor":
        other = self._const(other)
        a, b = self, other
        if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
            raise ShapeError(f"matmul shape mismatch: {a.shape} @ {b.shape}")

        def _backward(g: np.ndarray) -> None:
            if a.requires_grad:
                a._accumulate(g @ b.data.T)
            if b.requires_grad:
                b._accumulate(a.data.T @ g)

        return Tensor._result(a.data @ b.data, (a, b), _backward)

    # ---------------- reductions ----------------
    def sum(self, axis: Optional[int] = None, keepdims: bool = False) -> "Tensor":
        a = self

        def _backward(g: np.ndarray) -> None:
            if axis is not None and not keepdims:
                g = np.expand_dims(g, axis)
            a._accumulate(np.broadcast_to(g, a.data.shape))

        return Tensor._result(a.data.sum(axis=axis, keepdims=keepdims), (a,), _backward)

    def mean(self, axis: Optional[int] = None, keepdims: bool = False) -> "Tensor":
        count = self.data.size if axis is None else self.data.shape[axis]
        return self.sum(axis=axis, keepdims=keepdims) * (1.0 / count)

    # ---------------- elementwise ----------------
    def tanh(self) -> "Tensor":
        a = self
        out = np.tanh(a.data)

        def _backward(g: np.ndarray) -> None:
            a._accumulate(g * (1.0 - out * out))

        return Tensor._result(out, (a,), _backward)

    def softplus(self) -> "Tensor":
        a = self
        x = a.data
        # ln(1+e^x) overflows for large x; it equals x to working precision past 20
        out = np.where(x > 20.0, x, np.log1p(np.exp(np.minimum(x, 20.0)))).astype(x.dtype, copy=False)

        def _backward(g: np.ndarray) -> None:
            sig = np.exp(-np.logaddexp(0.0, -x)).astype(x.dtype, copy=False)
            a._accumulate(g * sig)

        return Tensor._result(out, (a,), _backward)

    def sqrt(self) -> "Tensor":
        a = self
        out = np.sqrt(a.data)

        def _backward(g: np.ndarray) -> None:
            a._accumulate(g * 0.5 / out)

        return Tensor._result(out, (a,), _backward)

    def round(self) -> "Tensor":
        """Non-differentiable rounding; the result carries no history."""
        return Tensor(np.round(self.data))


def stop_gradient(t: Tensor) -> Tensor:
    return t.detach()


def as_tensor(x: ArrayLike) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=default_dtype()))


def concat(tensors: Sequence[Tensor], axis: int = -1) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    out = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.data.shape[axis] for t in tensors]
    bounds = np.cumsum([0] + sizes)

    def _backward(g: np.ndarray) -> None:
        for t, lo, hi in zip(tensors, bounds[:-1], bounds[1:]):
            if t.requires_grad:
                t._accumulate(np.take(g, np.arange(lo, hi), axis=axis))

    return Tensor._result(out, tuple(tensors), _backward)


def minimum(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise min; ties route the gradient to the first operand."""
    mask = a.data <= b.data

    def _backward(g: np.ndarray) -> None:
        if a.requires_grad:
            a._accumulate(np.where(mask, g, 0.0))
        if b.requires_grad:
            b._accumulate(np.where(mask, 0.0, g))

    return Tensor._result(np.where(mask, a.data, b.data), (a, b), _backward)


def _topological_order(root: Tensor) -> List[Tensor]:
    order: List[Tensor] = []
    seen = set()
    stack: List[Tuple[Tensor, bool]] = [(root, False)]
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
            if parent.requires_grad and id(parent) not in seen:
                stack.append((parent, False))
    return order


def backward(loss: Tensor) -> None:
    """
    Populate .grad on every tensor reachable from a scalar loss.
    Gradients accumulate; call zero_grad between updates.
    """
    if loss.data.size != 1:
        raise GradError(f"backward() needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        return
    order = _topological_order(loss)
    loss.grad = np.ones_like(loss.data)
    for node in reversed(order):
        if node._backward is not None and node.grad is not None:
            node._backward(node.grad)
    # drop the graph so intermediate buffers can be freed
    for node in order:
        if node._parents:
            node._parents = ()
            node._backward = None


class Parameter(Tensor):
    """
    Named trainable tensor. Optimizer moments live on the parameter itself,
    one slot per optimizer that steps it (a parameter shaped by two
    objectives keeps independent Adam state for each).
    """

    def __init__(self, name: str, data: np.ndarray):
        super().__init__(np.array(data, dtype=default_dtype(), copy=True), requires_grad=True)
        self.name = name
        self.state: Dict[str, Dict[str, object]] = {}

    def __repr__(self) -> str:
        return f"Parameter({self.name!r}, shape={self.shape})"

    def frozen(self) -> Tensor:
        """A read-only view that takes part in forward math but never receives gradient."""
        return Tensor(self.data)
