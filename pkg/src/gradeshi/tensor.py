"""Dense 4-axis float arrays and the handful of array operations layers build on.

Every value the engine moves around is a ``Tensor``: a contiguous row-major
array with exactly four extents, laid out as (batch, height, width, channels).
Rank-2 data (feature matrices, class scores) uses the (batch, 1, 1, features)
mapping. Storage is float32 for training; float64 can be selected for
verification runs where finite-difference checks need the extra precision.

Tensors are immutable once created: all operations return new tensors, so
instances are safe to share across readers.
"""

from __future__ import annotations

from typing import Sequence, Union

import numpy as np

from .errors import ShapeError

Shape = tuple[int, int, int, int]

FLOAT32 = np.float32
FLOAT64 = np.float64

SeedLike = Union[int, Sequence[int], np.random.Generator]


def _as_rng(seed: SeedLike) -> np.random.Generator:
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


def _check_shape(shape) -> Shape:
    try:
        extents = tuple(int(e) for e in shape)
    except (TypeError, ValueError):
        raise ShapeError(f"shape must be a sequence of 4 integers, got {shape!r}") from None
    if len(extents) != 4 or any(e < 0 for e in extents):
        raise ShapeError(f"shape must be 4 non-negative extents, got {shape!r}")
    return extents


class Tensor:
    """Immutable dense array with shape (batch, height, width, channels)."""

    __slots__ = ("_data",)

    def __init__(self, values, shape: Shape | None = None, dtype=FLOAT32):
        arr = np.asarray(values, dtype=dtype)
        if shape is not None:
            shape = _check_shape(shape)
            expected = int(np.prod(shape, dtype=np.int64))
            if arr.size != expected:
                raise ShapeError(
                    f"data of length {arr.size} does not fill shape {shape} ({expected} elements)"
                )
            arr = arr.reshape(shape)
        elif arr.ndim != 4:
            raise ShapeError(f"expected 4 axes, got {arr.ndim}")
        arr = np.ascontiguousarray(arr)
        arr.flags.writeable = False
        self._data = arr

    @classmethod
    def _wrap(cls, arr: np.ndarray) -> "Tensor":
        # Internal fast path: takes ownership of a freshly allocated 4-axis array.
        t = object.__new__(cls)
        if not arr.flags.c_contiguous:
            arr = np.ascontiguousarray(arr)
        arr.flags.writeable = False
        t._data = arr
        return t

    # ---- construction -----------------------------------------------------

    @classmethod
    def zeros(cls, shape: Shape, dtype=FLOAT32) -> "Tensor":
        return cls._wrap(np.zeros(_check_shape(shape), dtype=dtype))

    @classmethod
    def full(cls, shape: Shape, value: float, dtype=FLOAT32) -> "Tensor":
        return cls._wrap(np.full(_check_shape(shape), value, dtype=dtype))

    @classmethod
    def from_values(cls, shape: Shape, values, dtype=FLOAT32) -> "Tensor":
        """Explicit row-major data; length must match the shape exactly."""
        return cls(np.asarray(values, dtype=dtype).ravel(), shape=shape, dtype=dtype)

    @classmethod
    def uniform(cls, shape: Shape, lo: float, hi: float, seed: SeedLike, dtype=FLOAT32) -> "Tensor":
        shape = _check_shape(shape)
        rng = _as_rng(seed)
        return cls._wrap(rng.uniform(lo, hi, size=shape).astype(dtype))

    @classmethod
    def he_normal(cls, shape: Shape, fan_in: int, seed: SeedLike, dtype=FLOAT32) -> "Tensor":
        """Zero-mean normal with std sqrt(2/fan_in), the usual choice under ReLU."""
        shape = _check_shape(shape)
        rng = _as_rng(seed)
        std = np.sqrt(2.0 / float(fan_in))
        return cls._wrap((rng.standard_normal(size=shape) * std).astype(dtype))

    @classmethod
    def from_matrix(cls, values, dtype=FLOAT32) -> "Tensor":
        """(m, n) matrix data placed on the (m, 1, 1, n) rank-2 mapping."""
        arr = np.asarray(values, dtype=dtype)
        if arr.ndim != 2:
            raise ShapeError(f"expected a 2-axis matrix, got {arr.ndim} axes")
        return cls._wrap(arr.reshape(arr.shape[0], 1, 1, arr.shape[1]).copy())

    # ---- views ------------------------------------------------------------

    @property
    def shape(self) -> Shape:
        return self._data.shape

    @property
    def dtype(self):
        return self._data.dtype

    @property
    def size(self) -> int:
        return self._data.size

    @property
    def data(self) -> np.ndarray:
        """Read-only view of the underlying array."""
        return self._data

    @property
    def matrix(self) -> np.ndarray:
        """Read-only (batch, features) view of a rank-2 mapped tensor."""
        b, h, w, c = self._data.shape
        if h != 1 or w != 1:
            raise ShapeError(f"shape {self.shape} is not on the rank-2 (batch,1,1,features) mapping")
        return self._data.reshape(b, c)

    def reshape(self, shape: Shape) -> "Tensor":
        shape = _check_shape(shape)
        expected = int(np.prod(shape, dtype=np.int64))
        if expected != self._data.size:
            raise ShapeError(f"cannot reshape {self.shape} ({self._data.size} elements) to {shape}")
        return Tensor._wrap(self._data.reshape(shape))

    def astype(self, dtype) -> "Tensor":
        if self._data.dtype == dtype:
            return self
        return Tensor._wrap(self._data.astype(dtype))

    def copy(self) -> "Tensor":
        return Tensor._wrap(self._data.copy())

    def tolist(self) -> list:
        return self._data.ravel().tolist()

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, dtype={self._data.dtype.name})"

    # ---- elementwise arithmetic --------------------------------------------

    def _binary(self, other, op) -> "Tensor":
        if isinstance(other, Tensor):
            if other.shape != self.shape:
                raise ShapeError(f"elementwise operands differ in shape: {self.shape} vs {other.shape}")
            return Tensor._wrap(op(self._data, other._data))
        if isinstance(other, (int, float, np.floating, np.integer)):
            return Tensor._wrap(op(self._data, self._data.dtype.type(other)))
        return NotImplemented

    def __add__(self, other):
        return self._binary(other, np.add)

    def __sub__(self, other):
        return self._binary(other, np.subtract)

    def __mul__(self, other):
        return self._binary(other, np.multiply)

    __radd__ = __add__
    __rmul__ = __mul__

    def scale(self, factor: float) -> "Tensor":
        return self * factor


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product of two rank-2 mapped tensors: (m,k) @ (k,n) -> (m,n)."""
    am = a.matrix
    bm = b.matrix
    if am.shape[1] != bm.shape[0]:
        raise ShapeError(f"inner extents differ: {am.shape} @ {bm.shape}")
    out = am @ bm
    return Tensor._wrap(out.reshape(out.shape[0], 1, 1, out.shape[1]))


def argmax_last_axis(t: Tensor) -> np.ndarray:
    """Per-row index of the maximum value; ties resolve to the lowest index."""
    m = t.matrix
    if m.shape[1] < 1:
        raise ShapeError("argmax needs at least one class column")
    return np.argmax(m, axis=1)
