"""Dense float64 tensors with define-by-run reverse-mode differentiation.

A :class:`Tape` is rebuilt for every forward pass. Tensors created from
parameters registered on a tape are tracked; every op whose inputs include a
tracked tensor records itself on that tape. Ops on untracked tensors run
eagerly and record nothing, which is how frozen teachers are evaluated.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np
from scipy.special import expit, softmax

from .errors import ShapeError

logger = logging.getLogger(__name__)

PROB_FLOOR = 1e-12

Vjp = Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]


class Tensor:
    """A row-major float64 array, optionally living on a tape."""

    __slots__ = ("value", "tape", "slot")

    def __init__(self, value, tape: Optional["Tape"] = None, slot: Optional[int] = None):
        self.value = np.asarray(value, dtype=np.float64)
        self.tape = tape
        self.slot = slot

    @property
    def shape(self) -> tuple[int, ...]:
        return self.value.shape

    @property
    def data(self) -> np.ndarray:
        return self.value.ravel()

    @property
    def tracked(self) -> bool:
        return self.tape is not None

    def __float__(self) -> float:
        if self.value.size != 1:
            raise ShapeError(f"cannot convert tensor of shape {self.shape} to a scalar")
        return float(self.value.reshape(()))

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, tracked={self.tracked})"


@dataclass
class _Record:
    name: str
    inputs: tuple[Optional[int], ...]
    vjp: Optional[Vjp]


class Tape:
    """Ordered record of executed ops; slots are appended in execution order."""

    def __init__(self):
        self._records: list[_Record] = []
        self._values: list[np.ndarray] = []
        self._params: dict[str, int] = {}

    def __len__(self) -> int:
        return len(self._records)

    def parameter(self, name: str, value) -> Tensor:
        if name in self._params:
            raise ValueError(f"parameter {name!r} registered twice on one tape")
        tensor = self._append(name, np.array(value, dtype=np.float64), (), None)
        self._params[name] = tensor.slot
        return tensor

    def record(self, name: str, value: np.ndarray, inputs: Sequence[Tensor], vjp: Vjp) -> Tensor:
        slots = tuple(t.slot if t.tape is self else None for t in inputs)
        return self._append(name, value, slots, vjp)

    def _append(self, name, value, slots, vjp) -> Tensor:
        self._records.append(_Record(name, slots, vjp))
        self._values.append(value)
        return Tensor(value, tape=self, slot=len(self._records) - 1)

    def backward(self, loss: Tensor) -> dict[str, np.ndarray]:
        """Adjoints of ``loss`` for every registered parameter.

        Parameters the loss does not depend on get exact zeros.
        """
        if loss.tape is not self:
            raise ValueError("loss was not produced on this tape")
        if loss.value.size != 1:
            raise ShapeError(f"backward needs a scalar loss, got shape {loss.shape}")

        adjoints: list[Optional[np.ndarray]] = [None] * len(self._records)
        adjoints[loss.slot] = np.ones_like(loss.value)
        for slot in range(loss.slot, -1, -1):
            grad = adjoints[slot]
            record = self._records[slot]
            if grad is None or record.vjp is None:
                continue
            for parent, parent_grad in zip(record.inputs, record.vjp(grad)):
                if parent is None or parent_grad is None:
                    continue
                current = adjoints[parent]
                adjoints[parent] = parent_grad if current is None else current + parent_grad

        grads = {}
        for name, slot in self._params.items():
            grad = adjoints[slot]
            grads[name] = np.zeros_like(self._values[slot]) if grad is None else grad
        return grads


def backward(loss: Tensor, tape: Optional[Tape] = None) -> dict[str, np.ndarray]:
    tape = tape if tape is not None else loss.tape
    if tape is None:
        raise ValueError("loss is not tracked on any tape")
    return tape.backward(loss)


def as_tensor(value) -> Tensor:
    return value if isinstance(value, Tensor) else Tensor(value)


def _emit(name: str, value: np.ndarray, inputs: Sequence[Tensor], vjp: Vjp) -> Tensor:
    tapes = {id(t.tape): t.tape for t in inputs if t.tape is not None}
    if not tapes:
        return Tensor(value)
    if len(tapes) > 1:
        raise ValueError(f"{name}: inputs live on different tapes")
    (tape,) = tapes.values()
    return tape.record(name, value, inputs, vjp)


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.value.ndim != 2 or b.value.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul shape mismatch: {a.shape} x {b.shape}")
    av, bv = a.value, b.value
    return _emit("matmul", av @ bv, (a, b), lambda g: (g @ bv.T, av.T @ g))


def add_bias(x, bias) -> Tensor:
    """Row-wise ``x + bias``; the only broadcasting the trunk needs."""
    x, bias = as_tensor(x), as_tensor(bias)
    if x.value.ndim != 2 or bias.value.ndim != 1 or x.shape[1] != bias.shape[0]:
        raise ShapeError(f"add_bias shape mismatch: {x.shape} + {bias.shape}")
    return _emit("add_bias", x.value + bias.value, (x, bias), lambda g: (g, g.sum(axis=0)))


def tanh(x) -> Tensor:
    x = as_tensor(x)
    y = np.tanh(x.value)
    return _emit("tanh", y, (x,), lambda g: (g * (1.0 - y * y),))


def sigmoid(z) -> Tensor:
    z = as_tensor(z)
    y = expit(z.value)
    return _emit("sigmoid", y, (z,), lambda g: (g * y * (1.0 - y),))


def softmax_rows(z) -> Tensor:
    """Row-wise softmax; scipy subtracts the row max before exponentiating."""
    z = as_tensor(z)
    if z.value.ndim != 2:
        raise ShapeError(f"softmax_rows needs a matrix, got shape {z.shape}")
    y = softmax(z.value, axis=1)

    def vjp(g):
        return (y * (g - np.sum(g * y, axis=1, keepdims=True)),)

    return _emit("softmax_rows", y, (z,), vjp)


def cross_entropy_soft(target, pred) -> Tensor:
    """``-sum(target * log(pred))`` over every entry, with pred floored at 1e-12.

    Accepts a single distribution or a matrix of row distributions; the result
    is the summed loss.
    """
    t = np.asarray(target.value if isinstance(target, Tensor) else target, dtype=np.float64)
    pred = as_tensor(pred)
    if t.shape != pred.shape:
        raise ShapeError(f"cross_entropy_soft length mismatch: target {t.shape} vs pred {pred.shape}")
    p = pred.value
    clipped = np.maximum(p, PROB_FLOOR)
    loss = -np.sum(t * np.log(clipped))

    def vjp(g):
        return (np.where(p > PROB_FLOOR, -t / clipped, 0.0) * g,)

    return _emit("cross_entropy_soft", np.asarray(loss), (pred,), vjp)


def squared_error(target, pred) -> Tensor:
    """``sum((target - pred)**2)``."""
    t = np.asarray(target.value if isinstance(target, Tensor) else target, dtype=np.float64)
    pred = as_tensor(pred)
    if t.shape != pred.shape:
        raise ShapeError(f"squared_error shape mismatch: target {t.shape} vs pred {pred.shape}")
    diff = pred.value - t
    return _emit("squared_error", np.asarray(np.sum(diff * diff)), (pred,), lambda g: (2.0 * diff * g,))


def total(terms: Sequence[Tensor], tape: Optional[Tape] = None) -> Tensor:
    """Sum of scalar tensors; an empty sum is a zero recorded on ``tape``."""
    if not terms:
        if tape is None:
            return Tensor(0.0)
        return tape.record("zero", np.asarray(0.0), (), lambda g: ())
    value = np.asarray(sum(float(t) for t in terms))
    return _emit("total", value, tuple(terms), lambda g: tuple(g for _ in terms))
