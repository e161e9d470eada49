"""Tensor, differentiable Function base class and the computation tape."""

import itertools
import logging
import os
from contextlib import contextmanager
from contextvars import ContextVar
from typing import Any, Dict, Iterator, List, Optional, Sequence, Tuple, Union

import numpy as np

from fre_seg.errors import NonFiniteError, ShapeError, TapeError

logger = logging.getLogger(__name__)

DEBUG = bool(os.environ.get("FRE_SEG_DEBUG"))

_grad_enabled: ContextVar[bool] = ContextVar("fre_seg_grad_enabled", default=True)
_sequence = itertools.count()

ArrayLike = Union[np.ndarray, float, int, Sequence[float]]


@contextmanager
def no_grad() -> Iterator[None]:
    """Suppress tape recording inside the block."""
    token = _grad_enabled.set(False)
    try:
        yield
    finally:
        _grad_enabled.reset(token)


def grad_enabled() -> bool:
    return _grad_enabled.get()


class Function:
    """
    Base class for differentiable operations.

    Subclasses implement `forward` on raw arrays and `backward`, which maps the
    gradient of the output to one gradient (or None) per input tensor.
    """

    def __init__(self, *inputs: "Tensor"):
        self.inputs = inputs
        self.sequence = next(_sequence)
        self.released = False

    def forward(self, *arrays: np.ndarray, **kwargs: Any) -> np.ndarray:
        raise NotImplementedError

    def backward(self, grad: np.ndarray) -> Tuple[Optional[np.ndarray], ...]:
        raise NotImplementedError

    @classmethod
    def apply(cls, *tensors: "Tensor", **kwargs: Any) -> "Tensor":
        """Run the forward pass and record the op when any input needs a gradient."""
        func = cls(*tensors)
        out_data = func.forward(*(t.data for t in tensors), **kwargs)

        if DEBUG and np.issubdtype(out_data.dtype, np.floating):
            inputs_finite = all(np.all(np.isfinite(t.data)) for t in tensors)
            if inputs_finite and not np.all(np.isfinite(out_data)):
                raise NonFiniteError(f"{cls.__name__} produced non-finite values")

        requires_grad = grad_enabled() and any(t.requires_grad for t in tensors)
        return Tensor(out_data, requires_grad=requires_grad, creator=func if requires_grad else None)

    @staticmethod
    def unbroadcast(grad: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
        """Sum out broadcast dimensions so `grad` matches `shape`."""
        if grad.shape == shape:
            return grad
        while grad.ndim > len(shape):
            grad = grad.sum(axis=0)
        for axis, size in enumerate(shape):
            if size == 1 and grad.shape[axis] != 1:
                grad = grad.sum(axis=axis, keepdims=True)
        return grad


class Tensor:
    """A rank <= 4 real array (batch, channel, height, width) with an optional gradient."""

    def __init__(
        self,
        data: ArrayLike,
        requires_grad: bool = False,
        creator: Optional[Function] = None,
        dtype: Optional[Any] = None,
    ):
        array = np.asarray(data, dtype=dtype)
        if dtype is None and not np.issubdtype(array.dtype, np.floating):
            array = array.astype(np.float32)
        if array.ndim > 4:
            raise ShapeError("Tensor", "rank", f"at most 4 dimensions supported, got {array.ndim}")
        self.data = array
        self.requires_grad = requires_grad
        self.creator = creator
        self.grad: Optional[np.ndarray] = None

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def dtype(self) -> np.dtype:
        return self.data.dtype

    @property
    def is_leaf(self) -> bool:
        return self.creator is None

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def zero_grad(self) -> None:
        self.grad = np.zeros_like(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data, dtype=self.data.dtype)

    def astype(self, dtype: Any) -> "Tensor":
        """Leaf copy in another precision (used by the 64-bit gradient check path)."""
        return Tensor(self.data.astype(dtype), requires_grad=self.requires_grad)

    def backward(self) -> None:
        backward(self)

    def sum(self) -> "Tensor":
        from fre_seg.autograd.ops import sum_all
        return sum_all(self)

    def reshape(self, *shape: int) -> "Tensor":
        from fre_seg.autograd.ops import reshape
        return reshape(self, shape)

    def __add__(self, other: Union["Tensor", float]) -> "Tensor":
        from fre_seg.autograd.ops import add
        return add(self, _wrap(other, self.dtype))

    __radd__ = __add__

    def __mul__(self, other: Union["Tensor", float]) -> "Tensor":
        from fre_seg.autograd.ops import mul
        return mul(self, _wrap(other, self.dtype))

    __rmul__ = __mul__

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{flag})"


def _wrap(value: Union[Tensor, float], dtype: np.dtype) -> Tensor:
    if isinstance(value, Tensor):
        return value
    return Tensor(np.asarray(value, dtype=dtype))


class ComputationTape:
    """Recorded operations reachable from a loss, in creation (topological) order."""

    def __init__(self, nodes: List[Function]):
        self.nodes = nodes

    @classmethod
    def from_loss(cls, loss: Tensor) -> "ComputationTape":
        nodes: Dict[int, Function] = {}
        stack = [loss.creator] if loss.creator is not None else []
        while stack:
            node = stack.pop()
            if id(node) in nodes:
                continue
            nodes[id(node)] = node
            for inp in node.inputs:
                if inp.creator is not None and id(inp.creator) not in nodes:
                    stack.append(inp.creator)
        # Inputs are always created before the ops that consume them
        return cls(sorted(nodes.values(), key=lambda n: n.sequence))

    def backward(self, loss: Tensor) -> None:
        """Replay the tape in reverse, accumulating gradients into leaf tensors."""
        grads: Dict[int, np.ndarray] = {id(loss.creator): np.ones_like(loss.data)}
        for node in reversed(self.nodes):
            if node.released:
                raise TapeError("backward already ran on this graph; rebuild it with a new forward pass")
            node.released = True
            out_grad = grads.pop(id(node), None)
            if out_grad is None:
                continue
            for inp, g in zip(node.inputs, node.backward(out_grad)):
                if g is None or not inp.requires_grad:
                    continue
                if inp.creator is None:
                    if inp.grad is None:
                        inp.grad = np.zeros_like(inp.data)
                    inp.grad += g.astype(inp.data.dtype, copy=False)
                else:
                    key = id(inp.creator)
                    grads[key] = grads[key] + g if key in grads else g


def backward(loss: Tensor) -> None:
    """Accumulate d(loss)/d(t) into `t.grad` for every leaf reachable from `loss`."""
    if loss.data.size != 1:
        raise ShapeError("backward", "loss", f"expected a scalar, got shape {loss.shape}")
    if loss.creator is None:
        if loss.requires_grad:
            if loss.grad is None:
                loss.grad = np.zeros_like(loss.data)
            loss.grad += 1
        return

    tape = ComputationTape.from_loss(loss)
    logger.debug("backward over %d recorded ops", len(tape.nodes))
    tape.backward(loss)
