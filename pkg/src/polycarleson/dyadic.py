"""Dyadic intervals on the time grid and the frequency grid.

A dyadic interval of scale ``k`` and index ``n`` is ``[n 2^-k, (n+1) 2^-k)``.
Negative scales are allowed; they are the long intervals of the frequency
grid (a tile at time scale ``k`` has frequency intervals of scale ``-k``).
Containment and equality are decided on the integers, so they are exact.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction
from typing import Union

K_LIMIT = 60


@dataclass(frozen=True, order=True)
class DyadicInterval:
    scale: int
    index: int

    @property
    def length(self) -> float:
        return math.ldexp(1.0, -self.scale)

    @property
    def lo(self) -> float:
        return math.ldexp(float(self.index), -self.scale)

    @property
    def hi(self) -> float:
        return math.ldexp(float(self.index + 1), -self.scale)

    @property
    def lo_exact(self) -> Fraction:
        return _pow2(-self.scale) * self.index

    @property
    def hi_exact(self) -> Fraction:
        return _pow2(-self.scale) * (self.index + 1)

    @property
    def center(self) -> float:
        return math.ldexp(2.0 * self.index + 1.0, -self.scale - 1)

    def contains(self, other: "DyadicInterval") -> bool:
        """Return True iff ``other`` is a subset of ``self``."""
        if other.scale < self.scale:
            return False
        return (other.index >> (other.scale - self.scale)) == self.index

    def contains_point(self, x: float) -> bool:
        return self.lo <= x < self.hi

    def parent(self) -> "DyadicInterval":
        return DyadicInterval(self.scale - 1, self.index >> 1)

    def children(self) -> tuple["DyadicInterval", "DyadicInterval"]:
        return (DyadicInterval(self.scale + 1, 2 * self.index),
                DyadicInterval(self.scale + 1, 2 * self.index + 1))

    def ancestor(self, scale: int) -> "DyadicInterval":
        if scale > self.scale:
            raise ValueError("ancestor scale must not exceed the interval scale")
        return DyadicInterval(scale, self.index >> (self.scale - scale))

    def disjoint(self, other: "DyadicInterval") -> bool:
        return not (self.contains(other) or other.contains(self))

    def as_real(self) -> "RealInterval":
        return RealInterval(self.lo, self.hi)

    @classmethod
    def containing(cls, x: float, scale: int) -> "DyadicInterval":
        return cls(scale, math.floor(math.ldexp(x, scale)))


@dataclass(frozen=True)
class RealInterval:
    lo: float
    hi: float

    def __post_init__(self):
        if not self.lo <= self.hi:
            raise ValueError(f"empty or inverted interval [{self.lo}, {self.hi})")

    @property
    def length(self):
        return self.hi - self.lo

    @property
    def center(self):
        return (self.lo + self.hi) / 2

    def contains_point(self, x) -> bool:
        return self.lo <= x < self.hi

    def intersect(self, other: "RealInterval") -> "RealInterval | None":
        lo, hi = max(self.lo, other.lo), min(self.hi, other.hi)
        if lo > hi:
            return None
        return RealInterval(lo, hi)

    def as_real(self) -> "RealInterval":
        return self


Interval = Union[DyadicInterval, RealInterval]


def _pow2(e: int) -> Fraction:
    return Fraction(2) ** e


def center(I: Interval) -> float:
    return I.center


def brothers(I: DyadicInterval) -> tuple[DyadicInterval, DyadicInterval]:
    """Left and right brothers (same length, centers shifted by -|I| and +|I|)."""
    return DyadicInterval(I.scale, I.index - 1), DyadicInterval(I.scale, I.index + 1)


def dilate(I: Interval, a: float) -> RealInterval:
    if a <= 0:
        raise ValueError("dilation factor must be positive")
    c, half = I.center, a * I.length / 2
    return RealInterval(c - half, c + half)


def star(I: DyadicInterval) -> tuple[RealInterval, RealInterval, tuple[RealInterval, RealInterval]]:
    """Return ``(I*_l, I*_r, I*)``; ``I*`` is the pair of the two pieces."""
    c, L = I.center, I.length
    right = RealInterval(c + 3.5 * L, c + 5.5 * L)
    left = RealInterval(c - 5.5 * L, c - 3.5 * L)
    return left, right, (left, right)


def tilde(I: Interval) -> RealInterval:
    """The enlarged interval ``13 I``."""
    return dilate(I, 13)


def node_points(I: Interval, d: int) -> tuple[float, ...]:
    """Node system of ``I``: both endpoints, then midpoints level by level.

    Level ``l`` contributes the ``2^(l-1)`` midpoints of the binary refinement
    of ``I`` into ``2^(l-1)`` pieces, left to right.  Truncated at ``d`` points.
    """
    if d < 1:
        raise ValueError("need at least one node")
    lo, L = I.lo, I.length
    pts = [lo, lo + L]
    level = 1
    while len(pts) < d:
        pieces = 1 << (level - 1)
        for i in range(pieces):
            pts.append(lo + L * (2 * i + 1) / (2 * pieces))
        level += 1
    return tuple(pts[:d])


def node_fractions(I: DyadicInterval, d: int) -> tuple[Fraction, ...]:
    """Exact rational version of :func:`node_points` for a dyadic interval."""
    lo, L = I.lo_exact, _pow2(-I.scale)
    pts = [lo, lo + L]
    level = 1
    while len(pts) < d:
        pieces = 1 << (level - 1)
        for i in range(pieces):
            pts.append(lo + L * Fraction(2 * i + 1, 2 * pieces))
        level += 1
    return tuple(pts[:d])


def largest_dyadic_in(J: Interval, k_max: int = K_LIMIT) -> DyadicInterval:
    """Longest dyadic interval inside the closed interval ``[J.lo, J.hi]``.

    Ties between equal-length candidates go to the leftmost one.
    """
    a, b = J.lo, J.hi
    if not b > a:
        raise ValueError("interval has zero length")
    k = math.floor(-math.log2(b - a))
    while k <= k_max:
        n = math.ceil(math.ldexp(a, k))
        if math.ldexp(float(n + 1), -k) <= b:
            return DyadicInterval(k, n)
        k += 1
    raise ValueError(f"no dyadic interval of scale <= {k_max} fits in {J}")


def grid_cells(I: Interval, m: int) -> range:
    """Indices of the cells of the uniform grid of size ``2^m`` on [0,1] lying in ``I``.

    Cells are half-open ``[i 2^-m, (i+1) 2^-m)``; cells straddling an endpoint of
    ``I`` are included when their left end lies in ``I``.
    """
    n = 1 << m
    lo = max(0, math.ceil(math.ldexp(I.lo, m)))
    hi = min(n, math.ceil(math.ldexp(I.hi, m)))
    return range(lo, max(lo, hi))
