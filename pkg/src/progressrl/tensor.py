"""Flat row-major float64 tensors backed by ``array('d')`` buffers.

Every numeric quantity in the package lives in one of these. Keeping the
storage a plain buffer lets the compiled and pure-Python kernel backends
operate on exactly the same memory through the buffer protocol.
"""

from __future__ import annotations

import math
from array import array
from typing import Iterable, Sequence

from .errors import ConfigError


def new_buf(n: int) -> array:
    """Zero-filled float64 buffer of length n."""
    return array("d", bytes(8 * n))


def _prod(shape: Sequence[int]) -> int:
    p = 1
    for s in shape:
        p *= s
    return p


class Tensor:
    """Shape plus a flat float64 buffer in row-major order.

    Tensors are treated as immutable by convention; operations allocate
    fresh buffers. ``reshape`` shares the underlying buffer.
    """

    __slots__ = ("shape", "data")

    def __init__(self, shape: Sequence[int], data: array | None = None):
        shape = tuple(int(s) for s in shape)
        n = _prod(shape)
        if data is None:
            data = new_buf(n)
        elif len(data) != n:
            raise ConfigError(f"shape {shape} wants {n} elements, buffer has {len(data)}")
        self.shape = shape
        self.data = data

    @property
    def size(self) -> int:
        return len(self.data)

    def item(self) -> float:
        if len(self.data) != 1:
            raise ConfigError(f"item() on tensor of size {len(self.data)}")
        return self.data[0]

    def copy(self) -> "Tensor":
        return Tensor(self.shape, array("d", self.data))

    def reshape(self, shape: Sequence[int]) -> "Tensor":
        if _prod(shape) != self.size:
            raise ConfigError(f"cannot reshape {self.shape} to {tuple(shape)}")
        return Tensor(shape, self.data)

    def tolist(self):
        return _nest(list(self.data), self.shape)

    def row(self, i: int) -> list[float]:
        if len(self.shape) != 2:
            raise ConfigError("row() needs a rank-2 tensor")
        _, k = self.shape
        return list(self.data[i * k : (i + 1) * k])

    def all_finite(self) -> bool:
        return all(math.isfinite(v) for v in self.data)

    def __repr__(self):
        head = ", ".join(f"{v:.6g}" for v in list(self.data)[:6])
        tail = ", ..." if self.size > 6 else ""
        return f"Tensor(shape={self.shape}, [{head}{tail}])"


def _nest(flat: list[float], shape: tuple[int, ...]):
    if len(shape) <= 1:
        return flat
    step = _prod(shape[1:])
    return [_nest(flat[i * step : (i + 1) * step], shape[1:]) for i in range(shape[0])]


def zeros(shape: Sequence[int]) -> Tensor:
    return Tensor(shape)


def full(shape: Sequence[int], value: float) -> Tensor:
    t = Tensor(shape)
    for i in range(t.size):
        t.data[i] = value
    return t


def scalar(value: float) -> Tensor:
    return Tensor((), array("d", [value]))


def from_flat(shape: Sequence[int], values: Iterable[float]) -> Tensor:
    return Tensor(shape, array("d", values))


def vector(values: Iterable[float]) -> Tensor:
    buf = array("d", values)
    return Tensor((len(buf),), buf)


def matrix(rows: Sequence[Sequence[float]]) -> Tensor:
    n = len(rows)
    k = len(rows[0]) if n else 0
    buf = array("d", (v for r in rows for v in r))
    return Tensor((n, k), buf)


def concat_rows(tensors: Sequence[Tensor]) -> Tensor:
    """Stack rank-2 tensors with equal column counts along axis 0."""
    k = tensors[0].shape[1]
    buf = array("d")
    rows = 0
    for t in tensors:
        if t.shape[1] != k:
            raise ConfigError("concat_rows: column mismatch")
        buf.extend(t.data)
        rows += t.shape[0]
    return Tensor((rows, k), buf)
