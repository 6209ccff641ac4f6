"""Reverse-mode automatic differentiation over dense rank<=2 arrays, plus Adam.

Operations executed while a :class:`Tape` is active are recorded on it when
at least one operand requires a gradient.  Outside a tape (or inside
:func:`no_grad`) operations run eagerly with no bookkeeping, which is the
inference path used for streaming predictions.

    >>> w = Tensor([[2.0]], requires_grad=True)
    >>> with Tape() as tape:
    ...     loss = sum_(square(w))
    ...     tape.backward(loss)
    >>> w.grad
    array([[4.]])
"""

from __future__ import annotations

import contextlib
from dataclasses import dataclass
from typing import Callable, Iterable, Sequence

import numpy as np

from .errors import ContractError, DimensionError

_TAPES: list["Tape | None"] = []


class Tensor:
    """Dense float64 array of rank <= 2 with an optional gradient slot."""

    __slots__ = ("data", "grad", "requires_grad", "name")
    __array_priority__ = 100  # numpy scalars defer to our operators

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        arr = np.array(data, dtype=np.float64)
        if arr.ndim > 2:
            raise DimensionError(f"rank {arr.ndim} tensors are not supported (max 2)")
        self.data = arr
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        if self.data.size != 1:
            raise ContractError(f"tensor of shape {self.shape} is not a scalar")
        return float(self.data.reshape(-1)[0])

    def numpy(self) -> np.ndarray:
        return self.data

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}{tag}, requires_grad={self.requires_grad})"

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return affine(self, -1.0, float(other))

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(self, other)

    def __neg__(self):
        return affine(self, -1.0, 0.0)

    def __matmul__(self, other):
        return matmul(self, other)


BackwardFn = Callable[[np.ndarray], Sequence["np.ndarray | None"]]


class Tape:
    """Ordered record of primitive operations for one backward pass.

    Nodes are appended in execution order, so every node's inputs were
    produced by earlier nodes (or are leaves).  ``visits`` counts how many
    nodes the last backward sweep touched.
    """

    def __init__(self):
        self.nodes: list[tuple[Tensor, tuple[Tensor, ...], BackwardFn]] = []
        self.visits = 0

    def __enter__(self) -> "Tape":
        _TAPES.append(self)
        return self

    def __exit__(self, *exc) -> None:
        _TAPES.pop()

    def __len__(self) -> int:
        return len(self.nodes)

    def backward(self, loss: Tensor) -> None:
        backward(loss, self)

    def clear(self) -> None:
        self.nodes.clear()


def backward(loss: Tensor, tape: Tape) -> None:
    """Populate ``.grad`` on every tensor that requires a gradient.

    Gradients accumulate additively into existing ``.grad`` values, so callers
    zero parameter gradients before each pass.  The tape is cleared afterwards.
    """
    if loss.data.size != 1:
        raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        raise ContractError("loss was not produced by operations recorded on the tape")
    loss.grad = np.ones_like(loss.data)
    tape.visits = 0
    for out, inputs, fn in reversed(tape.nodes):
        tape.visits += 1
        g = out.grad
        if g is None:
            continue
        for t, gi in zip(inputs, fn(g)):
            if gi is None or not t.requires_grad:
                continue
            t.grad = gi if t.grad is None else t.grad + gi
    tape.clear()


@contextlib.contextmanager
def no_grad():
    """Suspend recording, even inside an active tape."""
    _TAPES.append(None)
    try:
        yield
    finally:
        _TAPES.pop()


def is_recording() -> bool:
    return bool(_TAPES) and _TAPES[-1] is not None


def _make(data: np.ndarray, inputs: tuple[Tensor, ...], fn: BackwardFn) -> Tensor:
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out.requires_grad = False
    out.name = None
    tape = _TAPES[-1] if _TAPES else None
    if tape is not None:
        for t in inputs:
            if t.requires_grad:
                out.requires_grad = True
                tape.nodes.append((out, inputs, fn))
                break
    return out


def _same_shape(a: Tensor, b: Tensor, op: str) -> None:
    if a.data.shape != b.data.shape:
        raise DimensionError(f"{op}: shape mismatch {a.data.shape} vs {b.data.shape}")


def constant(data) -> Tensor:
    return Tensor(data)


# -- binary elementwise -------------------------------------------------------

def add(a: Tensor, b) -> Tensor:
    if not isinstance(b, Tensor):
        return affine(a, 1.0, float(b))
    _same_shape(a, b, "add")
    return _make(a.data + b.data, (a, b), lambda g: (g, g))


def sub(a: Tensor, b) -> Tensor:
    if not isinstance(b, Tensor):
        return affine(a, 1.0, -float(b))
    _same_shape(a, b, "sub")
    return _make(a.data - b.data, (a, b), lambda g: (g, -g))


def mul(a: Tensor, b) -> Tensor:
    if not isinstance(b, Tensor):
        return affine(a, float(b), 0.0)
    _same_shape(a, b, "mul")
    ad, bd = a.data, b.data
    return _make(ad * bd, (a, b), lambda g: (g * bd, g * ad))


def affine(a: Tensor, scale: float, shift: float = 0.0) -> Tensor:
    """``scale * a + shift`` with python-scalar coefficients."""
    return _make(a.data * scale + shift, (a,), lambda g: (g * scale,))


# -- unary elementwise --------------------------------------------------------

def tanh(a: Tensor) -> Tensor:
    y = np.tanh(a.data)
    return _make(y, (a,), lambda g: (g * (1.0 - y * y),))


def sigmoid(a: Tensor) -> Tensor:
    # tanh form avoids overflow in exp for large |x|
    y = 0.5 * (1.0 + np.tanh(0.5 * a.data))
    return _make(y, (a,), lambda g: (g * y * (1.0 - y),))


def exp(a: Tensor) -> Tensor:
    y = np.exp(a.data)
    return _make(y, (a,), lambda g: (g * y,))


def abs_(a: Tensor) -> Tensor:
    s = np.sign(a.data)
    return _make(np.abs(a.data), (a,), lambda g: (g * s,))


def square(a: Tensor) -> Tensor:
    x = a.data
    return _make(x * x, (a,), lambda g: (2.0 * g * x,))


_UNARY = {"tanh": tanh, "sigmoid": sigmoid, "exp": exp, "abs": abs_, "square": square}
_BINARY = {"add": add, "sub": sub, "mul": mul}


def elementwise(op: str, *operands: Tensor) -> Tensor:
    """Dispatch one of add, sub, mul, tanh, sigmoid, exp, abs, square by name."""
    if op in _UNARY:
        (a,) = operands
        return _UNARY[op](a)
    if op in _BINARY:
        a, b = operands
        return _BINARY[op](a, b)
    raise ValueError(f"unknown elementwise op {op!r}")


# -- linear algebra -----------------------------------------------------------

def matmul(a: Tensor, b: Tensor) -> Tensor:
    ad, bd = a.data, b.data
    if ad.ndim != 2 or bd.ndim != 2:
        raise DimensionError(f"matmul expects rank-2 operands, got {ad.shape} and {bd.shape}")
    if ad.shape[1] != bd.shape[0]:
        raise DimensionError(f"matmul: inner dimensions differ {ad.shape} x {bd.shape}")
    return _make(ad @ bd, (a, b), lambda g: (g @ bd.T, ad.T @ g))


def linear(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """``x @ weight.T + bias`` for a vector ``x`` (n,) or a batch (B, n).

    The bias is broadcast over batch rows; this is the only row-broadcast the
    kernel supports.
    """
    xd, wd = x.data, weight.data
    if wd.ndim != 2 or xd.ndim not in (1, 2) or xd.shape[-1] != wd.shape[1]:
        raise DimensionError(f"linear: input {xd.shape} incompatible with weight {wd.shape}")
    out = xd @ wd.T
    if bias is None:
        if xd.ndim == 1:
            return _make(out, (x, weight), lambda g: (g @ wd, np.outer(g, xd)))
        return _make(out, (x, weight), lambda g: (g @ wd, g.T @ xd))
    if bias.data.shape != (wd.shape[0],):
        raise DimensionError(f"linear: bias {bias.data.shape} does not match weight {wd.shape}")
    out = out + bias.data
    if xd.ndim == 1:
        return _make(out, (x, weight, bias), lambda g: (g @ wd, np.outer(g, xd), g))
    return _make(out, (x, weight, bias), lambda g: (g @ wd, g.T @ xd, g.sum(axis=0)))


# -- reductions and structure -------------------------------------------------

def sum_(a: Tensor) -> Tensor:
    shape = a.data.shape
    return _make(np.array(a.data.sum()), (a,), lambda g: (np.full(shape, float(g)),))


def mean(a: Tensor) -> Tensor:
    shape, n = a.data.shape, a.data.size
    return _make(np.array(a.data.mean()), (a,), lambda g: (np.full(shape, float(g) / n),))


def concat(tensors: Sequence[Tensor], axis: int = -1) -> Tensor:
    """Join tensors along their last axis (all other dims must agree)."""
    tensors = tuple(tensors)
    datas = [t.data for t in tensors]
    ndim = datas[0].ndim
    if ndim == 0 or any(d.ndim != ndim for d in datas) or any(d.shape[:-1] != datas[0].shape[:-1] for d in datas):
        raise DimensionError(f"concat: incompatible shapes {[d.shape for d in datas]}")
    if axis not in (-1, ndim - 1):
        raise DimensionError("concat only joins along the last axis")
    cuts = np.cumsum([d.shape[-1] for d in datas])[:-1]
    return _make(np.concatenate(datas, axis=-1), tensors, lambda g: np.split(g, cuts, axis=-1))


def slice_last(a: Tensor, start: int, stop: int) -> Tensor:
    """Columns ``start:stop`` of the last axis."""
    shape = a.data.shape

    def fn(g):
        full = np.zeros(shape)
        full[..., start:stop] = g
        return (full,)

    return _make(a.data[..., start:stop], (a,), fn)


def reshape(a: Tensor, shape: tuple[int, ...]) -> Tensor:
    old = a.data.shape
    return _make(a.data.reshape(shape), (a,), lambda g: (g.reshape(old),))


# -- optimizer ----------------------------------------------------------------

@dataclass
class AdamState:
    first_moment: list[np.ndarray]
    second_moment: list[np.ndarray]
    step_count: int = 0
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


class Adam:
    """Adam with bias-corrected moment estimates."""

    def __init__(self, params: Iterable[Tensor], lr: float = 1e-3, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8):
        self.params = list(params)
        self.state = AdamState(
            first_moment=[np.zeros_like(p.data) for p in self.params],
            second_moment=[np.zeros_like(p.data) for p in self.params],
            lr=lr, beta1=beta1, beta2=beta2, eps=eps,
        )

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None

    def step(self) -> None:
        adam_step(self.params, self.state)


def adam_step(params: Sequence[Tensor], state: AdamState) -> None:
    """Apply one Adam update in place using each parameter's ``.grad``."""
    for i, p in enumerate(params):
        if p.grad is None:
            raise ContractError(f"parameter {p.name or i} has no gradient")
    state.step_count += 1
    t = state.step_count
    b1, b2 = state.beta1, state.beta2
    corr1 = 1.0 - b1 ** t
    corr2 = 1.0 - b2 ** t
    for p, m, v in zip(params, state.first_moment, state.second_moment):
        g = p.grad
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        p.data -= state.lr * (m / corr1) / (np.sqrt(v / corr2) + state.eps)
