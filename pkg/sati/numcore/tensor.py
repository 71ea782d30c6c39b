"""Dense float64 tensors and the reverse-mode tape that differentiates them.

A :class:`Tape` is activated with ``with Tape() as tape:``; every operation built
through :func:`primitive` while it is active, and whose inputs require gradients,
is appended to it. Creation order is a topological order of the computation, so
:func:`backward` simply replays the recorded nodes in reverse.
"""
from __future__ import annotations

import contextlib
import contextvars
from dataclasses import dataclass
from typing import Any, Callable, Iterator, Optional, Sequence

import numpy as np

from sati.errors import ContractError

__all__ = [
    "Tensor",
    "Tape",
    "Node",
    "Gradients",
    "primitive",
    "backward",
    "no_grad",
    "as_tensor",
    "unbroadcast",
]

VJP = Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]

_ACTIVE_TAPE: contextvars.ContextVar[Optional["Tape"]] = contextvars.ContextVar(
    "sati_active_tape", default=None
)


class Tensor:
    """Row-major float64 array with gradient bookkeeping.

    Tensors are value-semantic: constructing one copies its data, and operations
    never mutate their inputs. Parameters are the only tensors updated in place,
    by the optimizer, between passes.
    """

    __slots__ = ("data", "requires_grad", "name")

    def __init__(self, data: Any, *, requires_grad: bool = False, name: str | None = None) -> None:
        self.data = np.array(data, dtype=np.float64)
        self.requires_grad = requires_grad
        self.name = name

    @classmethod
    def _wrap(cls, data: np.ndarray, requires_grad: bool) -> "Tensor":
        tensor = cls.__new__(cls)
        tensor.data = np.asarray(data, dtype=np.float64)
        tensor.requires_grad = requires_grad
        tensor.name = None
        return tensor

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return int(self.data.size)

    def item(self) -> float:
        if self.data.size != 1:
            raise ContractError(f"item() needs a single element, got shape {self.shape}")
        return float(self.data.reshape(()))

    def numpy(self) -> np.ndarray:
        return self.data.copy()

    def __repr__(self) -> str:
        label = f", name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad}{label})"


@dataclass(slots=True)
class Node:
    """One recorded operation: its output, its inputs and its vector-Jacobian product."""

    output: Tensor
    inputs: tuple[Tensor, ...]
    vjp: VJP


class Tape:
    """Ordered record of differentiable operations for a single forward pass.

    A tape and the values on it belong to the thread that built them.
    """

    def __init__(self) -> None:
        self.nodes: list[Node] = []
        self._token: contextvars.Token[Optional[Tape]] | None = None

    def __enter__(self) -> "Tape":
        if self._token is not None:
            raise ContractError("tape is already active")
        self._token = _ACTIVE_TAPE.set(self)
        return self

    def __exit__(self, exc_type, exc, tb) -> None:     # noqa: ANN001
        if self._token is not None:
            _ACTIVE_TAPE.reset(self._token)
            self._token = None

    def __len__(self) -> int:
        return len(self.nodes)

    def record(self, output: Tensor, inputs: tuple[Tensor, ...], vjp: VJP) -> None:
        self.nodes.append(Node(output=output, inputs=inputs, vjp=vjp))

    def produced(self, tensor: Tensor) -> bool:
        return any(node.output is tensor for node in self.nodes)


class Gradients:
    """Gradient accumulators keyed by tensor identity."""

    def __init__(self, grads: dict[int, np.ndarray], tensors: dict[int, Tensor]) -> None:
        self._grads = grads
        self._tensors = tensors

    def __contains__(self, tensor: Tensor) -> bool:
        return id(tensor) in self._grads and self._tensors.get(id(tensor)) is tensor

    def __getitem__(self, tensor: Tensor) -> np.ndarray:
        if tensor not in self:
            raise KeyError(f"no gradient reached {tensor!r}")
        return self._grads[id(tensor)]

    def get(self, tensor: Tensor, default: Optional[np.ndarray] = None) -> Optional[np.ndarray]:
        if tensor not in self:
            return default
        return self._grads[id(tensor)]

    def get_or_zeros(self, tensor: Tensor) -> np.ndarray:
        grad = self.get(tensor)
        return np.zeros_like(tensor.data) if grad is None else grad

    def __len__(self) -> int:
        return len(self._grads)


def unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum ``grad`` down to ``shape`` after numpy broadcasting."""

    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(axis for axis, extent in enumerate(shape) if extent == 1 and grad.shape[axis] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


def as_tensor(value: Any) -> Tensor:
    if isinstance(value, Tensor):
        return value
    return Tensor(value)


def primitive(data: np.ndarray, inputs: Sequence[Tensor], vjp: VJP) -> Tensor:
    """Create the output of a differentiable operation and record it on the active tape.

    ``vjp`` maps the upstream gradient (shaped like ``data``) to one gradient per
    input, ``None`` for inputs it does not differentiate. Returned gradients may be
    broadcast-shaped; they are reduced to each input's shape during backward.
    """

    parents = tuple(inputs)
    requires_grad = any(parent.requires_grad for parent in parents)
    output = Tensor._wrap(data, requires_grad)
    tape = _ACTIVE_TAPE.get()
    if tape is not None and requires_grad:
        tape.record(output, parents, vjp)
    return output


@contextlib.contextmanager
def no_grad() -> Iterator[None]:
    """Suspend recording on the current thread."""

    token = _ACTIVE_TAPE.set(None)
    try:
        yield
    finally:
        _ACTIVE_TAPE.reset(token)


def backward(tape: Tape, loss: Tensor) -> Gradients:
    """Replay ``tape`` in reverse from the scalar ``loss``.

    Gradients of every tensor reached, leaves and intermediates, are returned;
    contributions from repeated uses of a value are summed.
    """

    if loss.shape != ():
        raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
    if not tape.produced(loss):
        raise ContractError("loss was not recorded on this tape")

    grads: dict[int, np.ndarray] = {id(loss): np.ones((), dtype=np.float64)}
    tensors: dict[int, Tensor] = {id(loss): loss}
    for node in reversed(tape.nodes):
        upstream = grads.get(id(node.output))
        if upstream is None:
            continue
        for parent, grad in zip(node.inputs, node.vjp(upstream)):
            if grad is None or not parent.requires_grad:
                continue
            grad = unbroadcast(np.asarray(grad, dtype=np.float64), parent.shape)
            key = id(parent)
            previous = grads.get(key)
            grads[key] = grad if previous is None else previous + grad
            tensors[key] = parent
    return Gradients(grads, tensors)
