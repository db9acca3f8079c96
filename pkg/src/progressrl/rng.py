"""Splittable, counter-based deterministic RNG.

Keys are 128-bit (two uint64 words). Random streams are generated by the
threefry2x64 block cipher over an incrementing counter, so draws are pure
functions of (key, counter) and independent of call order. Splitting
derives children through the same block function in a counter subspace
disjoint from the one used for draws.
"""

from __future__ import annotations

from array import array
from dataclasses import dataclass

from .backend import K
from .tensor import Tensor, new_buf

_M64 = (1 << 64) - 1
_SPLIT_TAG = 1 << 63
_FOLD_TAG = (1 << 63) + 1


@dataclass(frozen=True)
class RngKey:
    hi: int
    lo: int

    def __post_init__(self):
        object.__setattr__(self, "hi", self.hi & _M64)
        object.__setattr__(self, "lo", self.lo & _M64)


def seed_key(seed: int) -> RngKey:
    """Derive a well-mixed key from a (small) integer seed."""
    hi, lo = K.threefry2x64(0x9E3779B97F4A7C15, 0xD1B54A32D192ED03, seed & _M64, (seed >> 64) & _M64)
    return RngKey(hi, lo)


def rng_split(key: RngKey) -> tuple[RngKey, RngKey]:
    a0, a1 = K.threefry2x64(key.hi, key.lo, 0, _SPLIT_TAG)
    b0, b1 = K.threefry2x64(key.hi, key.lo, 1, _SPLIT_TAG)
    return RngKey(a0, a1), RngKey(b0, b1)


def fold_in(key: RngKey, data: int) -> RngKey:
    h, l = K.threefry2x64(key.hi, key.lo, data & _M64, _FOLD_TAG)
    return RngKey(h, l)


def uniforms(key: RngKey, n: int) -> Tensor:
    """n uniforms in [0, 1)."""
    buf = new_buf(n)
    K.rng_uniform(key.hi, key.lo, 0, buf, n)
    return Tensor((n,), buf)


def normals(key: RngKey, n: int) -> Tensor:
    """n standard-normal draws."""
    buf = new_buf(n)
    K.rng_normal(key.hi, key.lo, 0, buf, n)
    return Tensor((n,), buf)


def uniform_range(key: RngKey, n: int, lo: float, hi: float) -> Tensor:
    t = uniforms(key, n)
    out = new_buf(n)
    K.axpb(t.data, hi - lo, lo, out, n)
    return Tensor((n,), out)


def randints(key: RngKey, n: int, bound: int) -> list[int]:
    """n integers uniform in [0, bound)."""
    u = uniforms(key, n)
    return [min(int(u.data[i] * bound), bound - 1) for i in range(n)]


def permutation(key: RngKey, n: int) -> array:
    """Deterministic Fisher-Yates permutation of range(n) as array('q')."""
    idx = array("q", range(n))
    if n < 2:
        return idx
    u = uniforms(key, n - 1)
    for i in range(n - 1, 0, -1):
        j = int(u.data[n - 1 - i] * (i + 1))
        if j > i:
            j = i
        idx[i], idx[j] = idx[j], idx[i]
    return idx
