"""Dense float64 tensor value type and the handful of primitives built on it.

Tensors are immutable after construction (the backing numpy buffer is marked
read-only) so they can be shared freely between networks, traces and
gradient sets without defensive copies.
"""

from __future__ import annotations

import numpy as np

_OPS = {
    "add": np.add,
    "sub": np.subtract,
    "mul": np.multiply,
}


class Tensor:
    """Immutable n-dimensional array of float64, row-major."""

    __slots__ = ("arr",)

    def __init__(self, data, shape=None):
        arr = np.asarray(data, dtype=np.float64)
        if shape is not None:
            arr = arr.reshape(shape)
        if arr.size == 0:
            raise ValueError("tensor must be nonempty")
        arr = np.ascontiguousarray(arr)
        arr.flags.writeable = False
        object.__setattr__(self, "arr", arr)

    # --- construction helpers -------------------------------------------------

    @classmethod
    def zeros(cls, shape) -> "Tensor":
        return cls(np.zeros(shape, dtype=np.float64))

    @classmethod
    def full(cls, shape, value) -> "Tensor":
        return cls(np.full(shape, value, dtype=np.float64))

    # --- views ----------------------------------------------------------------

    @property
    def shape(self) -> tuple:
        return self.arr.shape

    @property
    def size(self) -> int:
        return self.arr.size

    @property
    def data(self) -> np.ndarray:
        """Flat row-major view of the values (read-only)."""
        return self.arr.reshape(-1)

    def reshape(self, shape) -> "Tensor":
        """New tensor with the same data; element count must not change."""
        if int(np.prod(shape)) != self.arr.size:
            raise ValueError(
                f"cannot reshape {self.arr.shape} ({self.arr.size} elements) to {tuple(shape)}"
            )
        return Tensor(self.arr.reshape(shape))

    def tolist(self):
        return self.arr.tolist()

    def item(self) -> float:
        if self.arr.size != 1:
            raise ValueError(f"item() on tensor of shape {self.shape}")
        return float(self.arr.reshape(-1)[0])

    def __getitem__(self, idx) -> float:
        return float(self.arr[idx])

    def __repr__(self):
        return f"Tensor(shape={self.shape})"

    def __setattr__(self, name, value):
        raise AttributeError("Tensor is immutable")

    # --- arithmetic sugar (same-shape only, no broadcasting) --------------------

    def __add__(self, other):
        return elementwise(self, other, "add")

    def __sub__(self, other):
        return elementwise(self, other, "sub")

    def __mul__(self, other):
        return elementwise(self, other, "mul")

    def allclose(self, other: "Tensor", tol=1e-12) -> bool:
        return self.shape == other.shape and bool(
            np.all(np.abs(self.arr - other.arr) <= tol)
        )


def elementwise(a: Tensor, b: Tensor, op: str) -> Tensor:
    """Elementwise add/sub/mul of two same-shaped tensors."""
    if op not in _OPS:
        raise ValueError(f"unknown elementwise op {op!r}, expected one of {sorted(_OPS)}")
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    return Tensor(_OPS[op](a.arr, b.arr))


def reduce_sum(t: Tensor, axes) -> Tensor:
    """Sum over the given set of axes; reduced axes are removed from the shape.

    An empty axis set returns the tensor unchanged.  Summing every axis
    yields a 0-d tensor holding the total.
    """
    axes = sorted(set(axes))
    if not axes:
        return t
    for ax in axes:
        if not 0 <= ax < t.arr.ndim:
            raise ValueError(f"axis {ax} out of range for shape {t.shape}")
    return Tensor(np.sum(t.arr, axis=tuple(axes)))


def argmax_flat(t: Tensor) -> int:
    """Flat row-major index of the maximum; ties go to the smallest index."""
    return int(np.argmax(t.arr))
