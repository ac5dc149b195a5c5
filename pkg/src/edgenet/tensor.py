"""Dense float32 tensors with tape-based reverse-mode differentiation.

A ``Tensor`` is a plain numpy array plus an optional gradient buffer.
Operations (see ``ops``) record themselves onto the active
``ComputationTape``; replaying the tape in reverse accumulates dLoss/dX
into every tensor that requires a gradient. Tensors and the tape that
recorded them belong to a single thread; independent tapes may run on
different threads concurrently.
"""

from __future__ import annotations

import threading
from typing import Callable, Optional, Sequence

import numpy as np

from .errors import ContractError


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "tape", "op")

    def __init__(self, data, requires_grad: bool = False):
        # asarray with order='C' keeps 0-d scalars 0-d (ascontiguousarray does not)
        self.data = np.asarray(data, dtype=np.float32, order="C")
        self.grad: Optional[np.ndarray] = None
        self.requires_grad = requires_grad
        self.tape: Optional["ComputationTape"] = None
        self.op: Optional[str] = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def size(self):
        return self.data.size

    @property
    def ndim(self):
        return self.data.ndim

    def item(self) -> float:
        return float(self.data)

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        flags = " grad" if self.requires_grad else ""
        return f"Tensor(shape={self.data.shape}{flags}, op={self.op})"


def param(data, rng: Optional[np.random.Generator] = None) -> Tensor:
    """Wrap an array (or draw one) as a trainable leaf tensor."""
    return Tensor(data, requires_grad=True)


class TapeRecord:
    __slots__ = ("op", "inputs", "output", "backward_fn")

    def __init__(self, op: str, inputs: Sequence[Tensor], output: Tensor,
                 backward_fn: Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]):
        self.op = op
        self.inputs = tuple(inputs)
        self.output = output
        self.backward_fn = backward_fn


_STATE = threading.local()


def _tape_stack():
    stack = getattr(_STATE, "stack", None)
    if stack is None:
        stack = []
        _STATE.stack = stack
    return stack


def active_tape() -> Optional["ComputationTape"]:
    stack = _tape_stack()
    return stack[-1] if stack else None


class ComputationTape:
    """Ordered record of differentiable operations for one forward pass."""

    def __init__(self):
        self.records: list[TapeRecord] = []

    def __enter__(self) -> "ComputationTape":
        _tape_stack().append(self)
        return self

    def __exit__(self, *exc):
        popped = _tape_stack().pop()
        assert popped is self
        return False

    def record(self, op, inputs, output, backward_fn):
        output.tape = self
        output.op = op
        self.records.append(TapeRecord(op, inputs, output, backward_fn))

    def count_uses(self, tensor: Tensor) -> int:
        """How many recorded operations consumed ``tensor`` as an input."""
        return sum(1 for rec in self.records if any(inp is tensor for inp in rec.inputs))

    def backward(self, loss: Tensor):
        """Accumulate dloss/dx into ``.grad`` of every recorded requires_grad tensor."""
        if loss.data.shape != ():
            raise ContractError(f"backward needs a scalar loss, got shape {loss.data.shape}")
        if loss.tape is not self:
            raise ContractError("loss was not recorded on this tape")
        loss.grad = np.ones((), dtype=np.float32)
        for rec in reversed(self.records):
            gout = rec.output.grad
            if gout is None:
                continue
            in_grads = rec.backward_fn(gout)
            for tensor, g in zip(rec.inputs, in_grads):
                if g is None or not tensor.requires_grad:
                    continue
                if tensor.grad is None:
                    tensor.grad = g
                else:
                    # non-inplace add: backward_fn may hand out aliased buffers
                    tensor.grad = tensor.grad + g


def backward(loss: Tensor):
    """Reverse-replay the tape that produced ``loss`` (must be scalar)."""
    if loss.tape is None:
        raise ContractError("loss was not produced under an active ComputationTape")
    loss.tape.backward(loss)
