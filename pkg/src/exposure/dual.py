"""Forward-mode derivative propagation for the pixel-wise filter math.

A `Dual` carries a value array plus a stack of K tangent arrays (one per
derivative direction). Arithmetic propagates exact chain-rule tangents, so
filter gradients are analytic rather than numeric. At non-differentiable
points (clip corners, |.| kinks, max ties) the subgradient from the right
is used.

Tangent arrays always carry a leading K axis and the same trailing rank as
the value, so numpy broadcasting lines up (scalars are stored with rank-3
singleton shape to combine with (H, W, 3) images).
"""

from __future__ import annotations

import numpy as np


class Dual:
    __slots__ = ("val", "tan")

    def __init__(self, val: np.ndarray, tan: np.ndarray):
        self.val = val
        self.tan = tan

    @staticmethod
    def constant(val, k: int, rank: int | None = None) -> "Dual":
        val = np.asarray(val, dtype=np.float64)
        if rank is not None:
            val = val.reshape((1,) * (rank - val.ndim) + val.shape)
        return Dual(val, np.zeros((k,) + val.shape))

    @staticmethod
    def seeded(val, k: int, index: int, rank: int | None = None) -> "Dual":
        """Scalar value with tangent 1 in direction `index`."""
        d = Dual.constant(val, k, rank)
        d.tan[index] = 1.0
        return d

    # -- arithmetic ------------------------------------------------------

    def __add__(self, other):
        if isinstance(other, Dual):
            return Dual(self.val + other.val, self.tan + other.tan)
        return Dual(self.val + other, self.tan.copy())

    __radd__ = __add__

    def __neg__(self):
        return Dual(-self.val, -self.tan)

    def __sub__(self, other):
        if isinstance(other, Dual):
            return Dual(self.val - other.val, self.tan - other.tan)
        return Dual(self.val - other, self.tan.copy())

    def __rsub__(self, other):
        return Dual(other - self.val, -self.tan)

    def __mul__(self, other):
        if isinstance(other, Dual):
            return Dual(self.val * other.val, self.tan * other.val + other.tan * self.val)
        return Dual(self.val * other, self.tan * other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, Dual):
            inv = 1.0 / other.val
            return Dual(
                self.val * inv,
                (self.tan - other.tan * (self.val * inv)) * inv,
            )
        return Dual(self.val / other, self.tan / other)

    def __rtruediv__(self, other):
        inv = 1.0 / self.val
        return Dual(other * inv, -self.tan * (other * inv * inv))

    # -- indexing helpers ------------------------------------------------

    def channel(self, c: int) -> "Dual":
        """Select color channel c of an (H, W, 3) image, keeping the axis."""
        return Dual(self.val[..., c : c + 1], self.tan[..., c : c + 1])


def stack_channels(parts: list[Dual]) -> Dual:
    return Dual(
        np.concatenate([p.val for p in parts], axis=-1),
        np.concatenate([p.tan for p in parts], axis=-1),
    )


def dexp(x: Dual) -> Dual:
    v = np.exp(x.val)
    return Dual(v, x.tan * v)


def dcos(x: Dual) -> Dual:
    return Dual(np.cos(x.val), -x.tan * np.sin(x.val))


def dabs(x: Dual) -> Dual:
    sign = np.where(x.val >= 0, 1.0, -1.0)  # right subgradient at 0
    return Dual(np.abs(x.val), x.tan * sign)


def dclip(x: Dual, lo: float, hi: float) -> Dual:
    inside = (x.val >= lo) & (x.val < hi)  # right subgradient at both corners
    return Dual(np.clip(x.val, lo, hi), x.tan * inside)


def dmaximum(a: Dual, b: Dual) -> Dual:
    take_a = a.val >= b.val
    return Dual(np.where(take_a, a.val, b.val), np.where(take_a, a.tan, b.tan))


def dminimum(a: Dual, b: Dual) -> Dual:
    take_a = a.val <= b.val
    return Dual(np.where(take_a, a.val, b.val), np.where(take_a, a.tan, b.tan))


def dmax0(x: Dual) -> Dual:
    pos = x.val >= 0
    return Dual(np.where(pos, x.val, 0.0), x.tan * pos)


def dpow(a: Dual, b: Dual) -> Dual:
    """a ** b for a >= 0; value and derivatives are 0 where a == 0."""
    pos = a.val > 0
    safe = np.where(pos, a.val, 1.0)
    v = np.where(pos, safe**b.val, 0.0)
    # d(a^b) = a^b * (b' ln a + b a'/a)
    tan = v * (b.tan * np.log(safe) + b.val * a.tan / safe)
    return Dual(v, np.where(pos, tan, 0.0))


def dwhere(cond: np.ndarray, a: Dual, b: Dual) -> Dual:
    return Dual(np.where(cond, a.val, b.val), np.where(cond, a.tan, b.tan))


def select(cond: np.ndarray, a: Dual, b) -> Dual:
    """dwhere with a plain-array/scalar else-branch (zero tangent)."""
    bv = np.broadcast_to(np.asarray(b, dtype=np.float64), np.shape(a.val))
    return Dual(np.where(cond, a.val, bv), np.where(cond, a.tan, 0.0))
