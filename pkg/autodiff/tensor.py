"""
Dense float64 tensors and the tape that records operations on them for reverse-mode gradients
"""

import logging
import threading
from contextlib import contextmanager
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from core.errors import DisconnectedLoss, ShapeMismatch

logger = logging.getLogger(__name__)

_state = threading.local()


def _tape_stack() -> List[Optional['Tape']]:
    if not hasattr(_state, 'stack'):
        _state.stack = []
    return _state.stack


def current_tape() -> Optional['Tape']:
    """Innermost active tape, or None inside no_grad() or when nothing is recording"""
    stack = _tape_stack()
    return stack[-1] if stack else None


@contextmanager
def no_grad():
    stack = _tape_stack()
    stack.append(None)
    try:
        yield
    finally:
        stack.pop()


class Tensor:
    """Real 64-bit array with an optional gradient buffer"""

    def __init__(self, data, requires_grad: bool = False, name: Optional[str] = None):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = requires_grad
        self.grad: Optional[np.ndarray] = None
        self.name = name

    @property
    def shape(self) -> Tuple[int, ...]:
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
            raise ShapeMismatch(f"item() needs a single element, tensor has shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self):
        label = f" name={self.name!r}" if self.name else ''
        return f"Tensor(shape={self.shape}{label}, requires_grad={self.requires_grad})"

    def __add__(self, other):
        from autodiff import functional as F
        return F.add(self, _as_tensor(other))

    __radd__ = __add__

    def __sub__(self, other):
        from autodiff import functional as F
        return F.sub(self, _as_tensor(other))

    def __rsub__(self, other):
        from autodiff import functional as F
        return F.sub(_as_tensor(other), self)

    def __mul__(self, other):
        from autodiff import functional as F
        if isinstance(other, (int, float)):
            return F.scale(self, float(other))
        return F.mul(self, _as_tensor(other))

    __rmul__ = __mul__

    def __neg__(self):
        from autodiff import functional as F
        return F.scale(self, -1.0)

    def __truediv__(self, other):
        from autodiff import functional as F
        if isinstance(other, (int, float)):
            return F.scale(self, 1.0 / float(other))
        return F.mul(self, _as_tensor(1.0 / np.asarray(other, dtype=np.float64)))

    def __matmul__(self, other):
        from autodiff import functional as F
        return F.matmul(self, _as_tensor(other))


def _as_tensor(value) -> Tensor:
    return value if isinstance(value, Tensor) else Tensor(np.asarray(value, dtype=np.float64))


class Node:
    __slots__ = ('inputs', 'output', 'backward')

    def __init__(self, inputs: Sequence[Tensor], output: Tensor, backward: Callable):
        self.inputs = tuple(inputs)
        self.output = output
        self.backward = backward


class Tape:
    """Ordered record of primitive applications; use as a context manager to start recording"""

    def __init__(self):
        self.nodes: List[Node] = []

    def record(self, inputs: Sequence[Tensor], output: Tensor, backward: Callable) -> None:
        self.nodes.append(Node(inputs, output, backward))

    def __len__(self):
        return len(self.nodes)

    def __enter__(self):
        _tape_stack().append(self)
        return self

    def __exit__(self, exc_type, exc, tb):
        stack = _tape_stack()
        if stack and stack[-1] is self:
            stack.pop()
        return False


def record_op(data: np.ndarray, inputs: Sequence[Tensor], backward: Callable) -> Tensor:
    """Wrap a primitive's result and put it on the active tape when any input needs a gradient"""
    tape = current_tape()
    needs = tape is not None and any(t.requires_grad for t in inputs)
    out = Tensor(data, requires_grad=needs)
    if needs:
        tape.record(inputs, out, backward)
    return out


def backward(tape: Tape, loss: Tensor) -> Dict[int, np.ndarray]:
    """Propagate d(loss)/d(.) through the tape in reverse and accumulate into leaf .grad buffers

    Args:
        tape: tape the loss was recorded on
        loss: scalar output

    Returns:
        Mapping id(leaf) -> gradient, for the leaves that received one
    """
    if loss.size != 1:
        raise ShapeMismatch(f"loss must be a scalar, got shape {loss.shape}")
    produced = {id(node.output) for node in tape.nodes}
    if not loss.requires_grad or id(loss) not in produced:
        raise DisconnectedLoss("loss was not computed from any tensor that requires a gradient on this tape")

    grads: Dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    leaves: Dict[int, Tensor] = {}
    for node in reversed(tape.nodes):
        g = grads.pop(id(node.output), None)
        if g is None:
            continue
        input_grads = node.backward(g)
        for tensor, tg in zip(node.inputs, input_grads):
            if tg is None or not tensor.requires_grad:
                continue
            key = id(tensor)
            if key in grads:
                grads[key] = grads[key] + tg
            else:
                grads[key] = tg
            if key not in produced:
                leaves[key] = tensor

    result = {}
    for key, leaf in leaves.items():
        g = grads.get(key)
        if g is None:
            continue
        leaf.grad = g.copy() if leaf.grad is None else leaf.grad + g
        result[key] = leaf.grad
    if not result:
        raise DisconnectedLoss("no leaf tensor received a gradient")
    return result
