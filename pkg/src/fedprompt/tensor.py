"""Dense float32 tensors and the reverse-mode gradient carrier.

Everything numeric in this package is 32-bit, row-major, and validated for
finiteness at construction from external input; hot loops downstream operate
on the raw ndarrays without further checks.
"""

from __future__ import annotations

import numpy as np

from fedprompt import _kernels as K
from fedprompt.errors import DataError, ShapeError

F32 = np.float32


def as_f32(x) -> np.ndarray:
    """Contiguous float32 view/copy of ``x`` (no validation)."""
    return np.ascontiguousarray(x, dtype=F32)


class Tensor:
    """Immutable-by-convention dense float32 array with validated contents."""

    __slots__ = ("data",)

    def __init__(self, data, validate: bool = True):
        arr = np.ascontiguousarray(data, dtype=F32)
        if validate and not np.all(np.isfinite(arr)):
            raise DataError("tensor contains non-finite entries")
        if any(s <= 0 for s in arr.shape):
            raise ShapeError(f"tensor dimensions must be positive, got {arr.shape}")
        self.data = arr

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    @classmethod
    def zeros(cls, *shape: int) -> "Tensor":
        return cls(np.zeros(shape, dtype=F32), validate=False)

    def copy(self) -> "Tensor":
        return Tensor(self.data.copy(), validate=False)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape})"


class DualTensor:
    """A value together with its accumulated gradient (same shape, zero-init)."""

    __slots__ = ("value", "grad")

    def __init__(self, value: Tensor):
        self.value = value
        self.grad = np.zeros_like(value.data)

    def accumulate(self, g: np.ndarray) -> None:
        if g.shape != self.grad.shape:
            raise ShapeError(f"gradient shape {g.shape} != value shape {self.grad.shape}")
        self.grad += g

    def zero_grad(self) -> None:
        self.grad[...] = 0.0


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product with fixed left-to-right accumulation over the inner axis."""
    if a.data.ndim != 2 or b.data.ndim != 2:
        raise ShapeError("matmul expects 2-D operands")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"inner dimensions disagree: {a.shape} x {b.shape}")
    return Tensor(K.matmul(a.data, b.data), validate=False)


def softmax(x: Tensor) -> Tensor:
    """Stable softmax of a 1-D tensor; entries positive, summing to 1."""
    if x.data.ndim != 1 or x.size == 0:
        raise ShapeError("softmax expects a non-empty 1-D tensor")
    return Tensor(K.softmax_rows(x.data[None, :])[0], validate=False)
