"""Float32 tensors and a recording tape for reverse-mode differentiation.

Operations only record themselves while a :class:`Tape` is active and at least
one input requires a gradient, so plain inference builds no graph at all::

    with Tape() as tape:
        loss = ops.sum(ops.matmul(a, b))
    tape.backward(loss)
"""
from __future__ import annotations

import contextlib
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .errors import ContractError, DimensionError, NumericError  # noqa: F401


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "name")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        arr = np.asarray(data, dtype=np.float32)
        if arr.ndim == 0:
            arr = arr.reshape(())
        self.data = arr
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self.name = name

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
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else _not_scalar(self)

    def zero_grad(self) -> None:
        self.grad = None

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def __repr__(self) -> str:
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}{tag}, requires_grad={self.requires_grad})"

    # arithmetic sugar; the implementations live in ops
    def __add__(self, other):
        from . import ops
        return ops.add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        from . import ops
        return ops.sub(self, other)

    def __rsub__(self, other):
        from . import ops
        return ops.sub(other, self)

    def __mul__(self, other):
        from . import ops
        return ops.mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        from . import ops
        return ops.div(self, other)

    def __rtruediv__(self, other):
        from . import ops
        return ops.div(other, self)

    def __neg__(self):
        from . import ops
        return ops.neg(self)

    def __pow__(self, exponent: float):
        from . import ops
        return ops.power(self, exponent)

    def __matmul__(self, other):
        from . import ops
        return ops.matmul(self, other)

    def reshape(self, *shape):
        from . import ops
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return ops.reshape(self, shape)

    def transpose(self, *axes):
        from . import ops
        return ops.transpose(self, axes)

    def sum(self, axis=None, keepdims=False):
        from . import ops
        return ops.sum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        from . import ops
        return ops.mean(self, axis=axis, keepdims=keepdims)


def _not_scalar(t: Tensor):
    raise ContractError(f"item() needs a single-element tensor, got shape {t.shape}")


BackwardFn = Callable[[np.ndarray], Sequence[np.ndarray | None]]


@dataclass
class Record:
    op: str
    inputs: tuple[Tensor, ...]
    output: Tensor
    backward: BackwardFn


class Tape:
    """Ordered log of executed primitives.

    Records are appended in execution order, which is already a topological
    order of the graph.
    """

    def __init__(self):
        self.records: list[Record] = []
        self._produced: set[int] = set()

    def __enter__(self) -> "Tape":
        _tape_stack.append(self)
        return self

    def __exit__(self, *exc) -> None:
        _tape_stack.pop()

    def __len__(self) -> int:
        return len(self.records)

    def record(self, op: str, inputs: Sequence[Tensor], output: Tensor, backward: BackwardFn) -> None:
        self.records.append(Record(op, tuple(inputs), output, backward))
        self._produced.add(id(output))

    def backward(self, root: Tensor) -> int:
        return backward(self, root)

    def clear(self) -> None:
        self.records.clear()
        self._produced.clear()


_tape_stack: list[Tape | None] = []
_scope_stack: list[str] = []


def active_tape() -> Tape | None:
    return _tape_stack[-1] if _tape_stack else None


@contextlib.contextmanager
def no_grad():
    """Suspend recording on any enclosing tape."""
    _tape_stack.append(None)
    try:
        yield
    finally:
        _tape_stack.pop()


@contextlib.contextmanager
def name_scope(name: str):
    """Label the layer currently executing; used in non-finite diagnostics."""
    _scope_stack.append(name)
    try:
        yield
    finally:
        _scope_stack.pop()


def current_scope() -> str:
    return "/".join(_scope_stack)


def backward(tape: Tape, root: Tensor) -> int:
    """Propagate d(root)/d(leaf) into ``leaf.grad`` for every leaf on the tape.

    Gradients from multiple paths are summed. Returns the number of records
    visited, which is each record at most once.
    """
    if root.size != 1:
        raise ContractError(f"backward needs a scalar root, got shape {root.shape}")
    pending: dict[int, np.ndarray] = {id(root): np.ones(root.shape, dtype=np.float32)}
    if id(root) not in tape._produced and root.requires_grad:
        _accumulate_leaf(root, pending.pop(id(root)))
        return 0
    visited = 0
    for rec in reversed(tape.records):
        g = pending.pop(id(rec.output), None)
        if g is None:
            continue
        visited += 1
        for inp, gi in zip(rec.inputs, rec.backward(g)):
            if gi is None or not inp.requires_grad:
                continue
            if gi.shape != inp.shape:
                raise ContractError(f"{rec.op}: gradient shape {gi.shape} != input shape {inp.shape}")
            if id(inp) in tape._produced:
                key = id(inp)
                if key in pending:
                    pending[key] = pending[key] + gi
                else:
                    pending[key] = gi
            else:
                _accumulate_leaf(inp, gi)
    return visited


def _accumulate_leaf(t: Tensor, g: np.ndarray) -> None:
    g = np.asarray(g, dtype=np.float32)
    if t.grad is None:
        t.grad = g.copy()
    else:
        t.grad += g


def grad_check(f: Callable[[Tensor], Tensor], x, step: float = 1e-3) -> float:
    """Worst per-coordinate relative error between the tape gradient and
    central differences of ``f`` at ``x``.

    The denominator of each relative error is ``max(|analytic|, |numeric|, 1e-8)``.
    The divided difference uses the perturbation actually representable in
    float32, not the nominal ``2 * step``.
    """
    x = np.asarray(x.data if isinstance(x, Tensor) else x, dtype=np.float32)
    leaf = Tensor(x.copy(), requires_grad=True)
    with Tape() as tape:
        out = f(leaf)
    tape.backward(out)
    analytic = leaf.grad if leaf.grad is not None else np.zeros_like(x)

    numeric = np.empty(x.size, dtype=np.float64)
    flat = x.reshape(-1)
    with no_grad():
        for i in range(flat.size):
            plus = flat.copy()
            minus = flat.copy()
            plus[i] = np.float32(flat[i] + step)
            minus[i] = np.float32(flat[i] - step)
            fp = float(f(Tensor(plus.reshape(x.shape))).item())
            fm = float(f(Tensor(minus.reshape(x.shape))).item())
            numeric[i] = (fp - fm) / (float(plus[i]) - float(minus[i]))

    a = analytic.reshape(-1).astype(np.float64)
    denom = np.maximum(np.maximum(np.abs(a), np.abs(numeric)), 1e-8)
    return float(np.max(np.abs(a - numeric) / denom)) if a.size else 0.0
