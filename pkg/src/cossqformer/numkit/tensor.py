"""Tensor value type and the tape that records differentiable operations."""

from __future__ import annotations

import threading
from typing import Callable, NamedTuple, Optional, Sequence

import numpy as np


class ShapeError(ValueError):
    """Operand shapes are incompatible."""


class NonFiniteError(FloatingPointError):
    """A tensor would contain NaN or Inf."""


class ContractError(ValueError):
    """An operation was called outside its contract."""


class Tensor:
    """Dense float64 array with an optional gradient slot.

    ``data`` is read-only once the tensor is built; only ``grad`` changes.
    """

    __slots__ = ("data", "requires_grad", "grad", "name")

    def __init__(self, data, requires_grad: bool = False, name: Optional[str] = None):
        arr = np.array(data, dtype=np.float64)
        self._init(arr, requires_grad, name)

    def _init(self, arr: np.ndarray, requires_grad: bool, name: Optional[str]) -> None:
        if not np.isfinite(arr).all():
            raise NonFiniteError(
                f"non-finite entries in tensor{'' if name is None else ' ' + name!s} of shape {arr.shape}"
            )
        arr.flags.writeable = False
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad: Optional[np.ndarray] = None
        self.name = name

    @classmethod
    def wrap(cls, arr: np.ndarray, requires_grad: bool = False) -> "Tensor":
        """Adopt ``arr`` without copying. The caller must not keep writing to it."""
        t = cls.__new__(cls)
        if not isinstance(arr, np.ndarray):
            arr = np.array(arr, dtype=np.float64)
        elif arr.dtype != np.float64:
            arr = arr.astype(np.float64)
        elif not arr.flags.c_contiguous:
            arr = np.ascontiguousarray(arr)
        t._init(arr, requires_grad, None)
        return t

    @property
    def shape(self) -> tuple:
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
        if self.data.size != 1:
            raise ContractError(f"item() needs a single element, got shape {self.shape}")
        return float(self.data.reshape(()))

    def zero_grad(self) -> None:
        self.grad = None

    def detach(self) -> "Tensor":
        return Tensor.wrap(self.data)

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag})"

    def __len__(self) -> int:
        return self.data.shape[0]

    # operator sugar; the functions live in ops
    def __add__(self, other):
        from . import ops

        return ops.add(self, other) if isinstance(other, Tensor) else ops.add_scalar(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        from . import ops

        return ops.sub(self, other) if isinstance(other, Tensor) else ops.add_scalar(self, -other)

    def __rsub__(self, other):
        from . import ops

        return ops.add_scalar(ops.neg(self), other)

    def __mul__(self, other):
        from . import ops

        return ops.mul(self, other) if isinstance(other, Tensor) else ops.scale(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        from . import ops

        return ops.div(self, other) if isinstance(other, Tensor) else ops.scale(self, 1.0 / other)

    def __neg__(self):
        from . import ops

        return ops.neg(self)

    def __matmul__(self, other):
        from . import ops

        return ops.matmul(self, other)

    def __getitem__(self, index):
        from . import ops

        return ops.take(self, index)

    @property
    def T(self):
        from . import ops

        return ops.transpose(self)


BackwardFn = Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]


class Node(NamedTuple):
    output: Tensor
    inputs: tuple
    backward: BackwardFn


class ComputationTape:
    """Ordered record of primitive operations, replayed in reverse by ``backward``.

    Use as a context manager; operations executed inside the ``with`` block
    on tensors that require gradients are recorded on this tape. Tapes are
    confined to the thread that opened them.
    """

    def __init__(self):
        self.nodes: list[Node] = []

    def __enter__(self) -> "ComputationTape":
        _stack().append(self)
        return self

    def __exit__(self, *exc) -> None:
        stack = _stack()
        if not stack or stack[-1] is not self:
            raise ContractError("tape exited out of order")
        stack.pop()

    def __len__(self) -> int:
        return len(self.nodes)


_local = threading.local()


def _stack() -> list:
    try:
        return _local.stack
    except AttributeError:
        _local.stack = []
        return _local.stack


def active_tape() -> Optional[ComputationTape]:
    stack = _stack()
    return stack[-1] if stack else None


def record(out: np.ndarray, inputs: Sequence[Tensor], backward: BackwardFn) -> Tensor:
    """Wrap a primitive's result and, if needed, put it on the active tape.

    ``backward`` maps the output gradient to one gradient (or ``None``) per
    input, each shaped like that input.
    """
    needs = any(t.requires_grad for t in inputs)
    result = Tensor.wrap(out, requires_grad=needs)
    if needs:
        tape = active_tape()
        if tape is not None:
            tape.nodes.append(Node(result, tuple(inputs), backward))
    return result


def backward(loss: Tensor, tape: Optional[ComputationTape] = None) -> None:
    """Populate ``grad`` on every gradient-requiring tensor reachable from ``loss``.

    Leaf gradients accumulate across calls; call ``zero_grad`` between steps.
    """
    if loss.data.size != 1 or loss.ndim > 2:
        raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
    if tape is None:
        tape = active_tape()
        if tape is None:
            raise ContractError("no tape given and none active")
    pending: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    owners: dict[int, Tensor] = {id(loss): loss}
    for node in reversed(tape.nodes):
        key = id(node.output)
        g = pending.pop(key, None)
        if g is None:
            continue
        owners.pop(key, None)
        node.output.grad = g
        for inp, gi in zip(node.inputs, node.backward(g)):
            if gi is None or not inp.requires_grad:
                continue
            k = id(inp)
            if k in pending:
                pending[k] = pending[k] + gi
            else:
                pending[k] = np.asarray(gi, dtype=np.float64).reshape(inp.shape)
                owners[k] = inp
    # whatever is left are leaves
    for k, g in pending.items():
        t = owners[k]
        if not t.requires_grad:
            continue
        t.grad = g.copy() if t.grad is None else t.grad + g
