"""Dense tensors with tape-based reverse-mode differentiation.

Operations only record onto a :class:`Tape` when one is active and at least
one input requires a gradient, so plain inference runs without bookkeeping::

    with Tape() as tape:
        loss = (w * x).sum()
    backward(loss, tape)
    w.grad  # == x.data
"""

from __future__ import annotations

import threading
from typing import Callable, Iterable, Optional, Sequence

import numpy as np

_local = threading.local()


def _tape_stack() -> list:
    stack = getattr(_local, "stack", None)
    if stack is None:
        stack = _local.stack = []
    return stack


def active_tape() -> Optional["Tape"]:
    stack = _tape_stack()
    return stack[-1] if stack else None


class BranchRecorder:
    """Collects the branch taken by every piecewise op evaluated while active.

    Two evaluations with equal records lie on the same smooth piece of the
    computation, which is what a finite-difference probe needs.
    """

    def __init__(self):
        self.choices: list[np.ndarray] = []

    def __enter__(self) -> "BranchRecorder":
        self._outer = getattr(_local, "recorder", None)
        _local.recorder = self
        return self

    def __exit__(self, *exc) -> None:
        _local.recorder = self._outer

    def same_branches(self, other: "BranchRecorder") -> bool:
        return len(self.choices) == len(other.choices) and all(
            a.shape == b.shape and np.array_equal(a, b)
            for a, b in zip(self.choices, other.choices))


def record_branch(choice: np.ndarray) -> None:
    recorder = getattr(_local, "recorder", None)
    if recorder is not None:
        recorder.choices.append(np.array(choice, copy=True))


class _Node:
    __slots__ = ("out", "inputs", "backward")

    def __init__(self, out, inputs, backward):
        self.out = out
        self.inputs = inputs
        self.backward = backward


class Tape:
    """Ordered record of executed primitives.

    Nodes are appended in execution order, which is a topological order of
    the graph. Tapes are confined to the thread that entered them.
    """

    def __init__(self):
        self.nodes: list[_Node] = []

    def __enter__(self) -> "Tape":
        _tape_stack().append(self)
        return self

    def __exit__(self, *exc):
        stack = _tape_stack()
        if not stack or stack[-1] is not self:
            raise RuntimeError("tape stack corrupted")
        stack.pop()
        return False

    def __len__(self):
        return len(self.nodes)

    def backward(self, loss: "Tensor") -> None:
        backward(loss, self)


class Tensor:
    """A dense n-d float array that may carry a gradient."""

    __array_priority__ = 1000

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        arr = np.asarray(data, dtype=dtype)
        if not np.issubdtype(arr.dtype, np.floating):
            arr = arr.astype(np.float64)
        self.data = arr
        self.requires_grad = requires_grad
        self.grad: Optional[np.ndarray] = None

    @property
    def shape(self) -> tuple:
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

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(()))

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{flag})"

    def __len__(self):
        return self.shape[0]

    # arithmetic
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

    def __pow__(self, exponent: float):
        return power(self, exponent)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return getitem(self, index)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis, keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes or None)

    def exp(self):
        return exp(self)

    def log(self):
        return log(self)

    def sqrt(self):
        return sqrt(self)

    def abs(self):
        return tabs(self)


class Parameter(Tensor):
    """A learnable leaf tensor with a zero-initialised gradient buffer."""

    def __init__(self, data, name: str = "", dtype=None):
        super().__init__(data, requires_grad=True, dtype=dtype)
        self.data = np.array(self.data, copy=True)
        self.grad = np.zeros_like(self.data)
        self.name = name

    def zero_grad(self) -> None:
        self.grad = np.zeros_like(self.data)

    def __repr__(self):
        return f"Parameter({self.name!r}, shape={self.shape}, dtype={self.dtype})"


def as_tensor(value, like: Optional[Tensor] = None) -> Tensor:
    if isinstance(value, Tensor):
        return value
    dtype = like.dtype if like is not None else None
    return Tensor(np.asarray(value, dtype=dtype))


def make_result(data: np.ndarray, inputs: Sequence[Optional[Tensor]],
                backward_fn: Callable[[np.ndarray], Sequence]) -> Tensor:
    """Wrap ``data`` as an op output, recording it when a tape is active.

    ``backward_fn`` maps the output adjoint to one adjoint per input (``None``
    for inputs that need no gradient).
    """
    tape = active_tape()
    if tape is not None and any(t is not None and t.requires_grad for t in inputs):
        out = Tensor(data, requires_grad=True)
        tape.nodes.append(_Node(out, tuple(inputs), backward_fn))
        return out
    return Tensor(data)


def backward(loss: Tensor, tape: Tape) -> None:
    """Accumulate reverse-mode adjoints of ``loss`` into leaf ``.grad``."""
    if loss.size != 1:
        raise ValueError(f"backward needs a scalar loss, got shape {loss.shape}")
    produced = {id(node.out) for node in tape.nodes}
    grads = {id(loss): np.ones_like(loss.data)}
    for node in reversed(tape.nodes):
        g = grads.pop(id(node.out), None)
        if g is None:
            continue
        for inp, gi in zip(node.inputs, node.backward(g)):
            if inp is None or gi is None or not inp.requires_grad:
                continue
            if gi.shape != inp.shape:
                raise RuntimeError(
                    f"adjoint shape {gi.shape} does not match input {inp.shape}")
            key = id(inp)
            if key in produced:
                if key in grads:
                    grads[key] = grads[key] + gi
                else:
                    grads[key] = gi
            elif inp.grad is None:
                inp.grad = np.array(gi, dtype=inp.dtype, copy=True)
            else:
                inp.grad += gi


def unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


def _binary(a, b):
    if isinstance(a, Tensor):
        return a, as_tensor(b, a)
    b = as_tensor(b)
    return as_tensor(a, b), b


def add(a, b) -> Tensor:
    a, b = _binary(a, b)

    def grad_fn(g):
        return unbroadcast(g, a.shape), unbroadcast(g, b.shape)

    return make_result(a.data + b.data, (a, b), grad_fn)


def sub(a, b) -> Tensor:
    a, b = _binary(a, b)

    def grad_fn(g):
        return unbroadcast(g, a.shape), unbroadcast(-g, b.shape)

    return make_result(a.data - b.data, (a, b), grad_fn)


def mul(a, b) -> Tensor:
    a, b = _binary(a, b)

    def grad_fn(g):
        ga = unbroadcast(g * b.data, a.shape) if a.requires_grad else None
        gb = unbroadcast(g * a.data, b.shape) if b.requires_grad else None
        return ga, gb

    return make_result(a.data * b.data, (a, b), grad_fn)


def div(a, b) -> Tensor:
    a, b = _binary(a, b)
    out = a.data / b.data

    def grad_fn(g):
        ga = unbroadcast(g / b.data, a.shape) if a.requires_grad else None
        gb = unbroadcast(-g * out / b.data, b.shape) if b.requires_grad else None
        return ga, gb

    return make_result(out, (a, b), grad_fn)


def neg(a: Tensor) -> Tensor:
    return make_result(-a.data, (a,), lambda g: (-g,))


def power(a: Tensor, exponent: float) -> Tensor:
    def grad_fn(g):
        return (g * exponent * a.data ** (exponent - 1),)

    return make_result(a.data ** exponent, (a,), grad_fn)


def exp(a: Tensor) -> Tensor:
    out = np.exp(a.data)
    return make_result(out, (a,), lambda g: (g * out,))


def log(a: Tensor) -> Tensor:
    return make_result(np.log(a.data), (a,), lambda g: (g / a.data,))


def log1p(a: Tensor) -> Tensor:
    return make_result(np.log1p(a.data), (a,), lambda g: (g / (1.0 + a.data),))


def sqrt(a: Tensor) -> Tensor:
    out = np.sqrt(a.data)
    return make_result(out, (a,), lambda g: (g * 0.5 / out,))


def clamped_sqrt(a: Tensor, floor: float = 1e-12) -> Tensor:
    """``sqrt(max(a, 0))`` with a finite slope near zero and none below it."""
    pos = a.data > 0
    record_branch(pos)
    out = np.sqrt(np.where(pos, a.data, 0.0))

    def grad_fn(g):
        return (np.where(pos, g * 0.5 / np.sqrt(np.maximum(a.data, floor)), 0.0),)

    return make_result(out, (a,), grad_fn)


def tabs(a: Tensor) -> Tensor:
    record_branch(np.sign(a.data))
    return make_result(np.abs(a.data), (a,), lambda g: (g * np.sign(a.data),))


def sin(a: Tensor) -> Tensor:
    return make_result(np.sin(a.data), (a,), lambda g: (g * np.cos(a.data),))


def cos(a: Tensor) -> Tensor:
    return make_result(np.cos(a.data), (a,), lambda g: (-g * np.sin(a.data),))


def minimum(a: Tensor, bound: float) -> Tensor:
    """Elementwise ``min(a, bound)`` against a constant."""
    keep = a.data < bound
    record_branch(keep)
    return make_result(np.where(keep, a.data, bound).astype(a.dtype), (a,),
                       lambda g: (g * keep,))


def maximum(a: Tensor, bound: float) -> Tensor:
    keep = a.data > bound
    record_branch(keep)
    return make_result(np.where(keep, a.data, bound).astype(a.dtype), (a,),
                       lambda g: (g * keep,))


def where(cond: np.ndarray, a, b) -> Tensor:
    a, b = _binary(a, b)
    cond = np.asarray(cond, dtype=bool)
    record_branch(cond)

    def grad_fn(g):
        return (unbroadcast(np.where(cond, g, 0.0), a.shape),
                unbroadcast(np.where(cond, 0.0, g), b.shape))

    return make_result(np.where(cond, a.data, b.data), (a, b), grad_fn)


def matmul(a, b) -> Tensor:
    a, b = _binary(a, b)
    if a.ndim < 2 or b.ndim < 2:
        raise ValueError("matmul needs operands of rank >= 2")

    def grad_fn(g):
        ga = gb = None
        if a.requires_grad:
            ga = unbroadcast(np.matmul(g, np.swapaxes(b.data, -1, -2)), a.shape)
        if b.requires_grad:
            gb = unbroadcast(np.matmul(np.swapaxes(a.data, -1, -2), g), b.shape)
        return ga, gb

    return make_result(np.matmul(a.data, b.data), (a, b), grad_fn)


def tsum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    def grad_fn(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape).copy(),)

    return make_result(np.asarray(a.data.sum(axis=axis, keepdims=keepdims)), (a,), grad_fn)


def mean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    if axis is None:
        n = a.size
    else:
        axes = axis if isinstance(axis, tuple) else (axis,)
        n = int(np.prod([a.shape[ax] for ax in axes]))
    return tsum(a, axis, keepdims) * (1.0 / n)


def reshape(a: Tensor, shape) -> Tensor:
    return make_result(a.data.reshape(shape), (a,), lambda g: (g.reshape(a.shape),))


def transpose(a: Tensor, axes=None) -> Tensor:
    inverse = None if axes is None else tuple(np.argsort(axes))
    return make_result(a.data.transpose(axes), (a,), lambda g: (g.transpose(inverse),))


def getitem(a: Tensor, index) -> Tensor:
    def grad_fn(g):
        out = np.zeros_like(a.data)
        np.add.at(out, index, g)
        return (out,)

    return make_result(np.asarray(a.data[index]), (a,), grad_fn)


def narrow(a: Tensor, axis: int, start: int, stop: int) -> Tensor:
    """Contiguous slice along one axis (cheaper adjoint than ``getitem``)."""
    index = [slice(None)] * a.ndim
    index[axis] = slice(start, stop)
    index = tuple(index)

    def grad_fn(g):
        out = np.zeros_like(a.data)
        out[index] = g
        return (out,)

    return make_result(a.data[index], (a,), grad_fn)


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = list(tensors)
    sizes = [t.shape[axis] for t in tensors]
    bounds = np.cumsum([0] + sizes)

    def grad_fn(g):
        return tuple(np.take(g, np.arange(bounds[i], bounds[i + 1]), axis=axis)
                     for i in range(len(tensors)))

    return make_result(np.concatenate([t.data for t in tensors], axis=axis), tensors, grad_fn)


def stack(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = list(tensors)

    def grad_fn(g):
        return tuple(np.take(g, i, axis=axis) for i in range(len(tensors)))

    return make_result(np.stack([t.data for t in tensors], axis=axis), tensors, grad_fn)


def split(a: Tensor, sections: int, axis: int = 0) -> list[Tensor]:
    size = a.shape[axis]
    if size % sections:
        raise ValueError(f"cannot split axis of size {size} into {sections} equal parts")
    step = size // sections
    return [narrow(a, axis, i * step, (i + 1) * step) for i in range(sections)]


def zero_grads(params: Iterable[Parameter]) -> None:
    for p in params:
        p.zero_grad()
