"""Real polynomials in the monomial basis.

Root isolation runs a Sturm chain in exact integer arithmetic (float
coefficients are dyadic rationals, so nothing is lost), bisects until each
interval holds one root, then refines by sign.  Float signs are trusted only
when they clear a Horner rounding bound; otherwise the sign is recomputed
exactly.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Sequence

import numpy as np

from .dyadic import Interval, node_points

TAU_ROOT = 1e-12


class Poly:
    """Polynomial ``c_0 + c_1 y + ... + c_m y^m`` with real coefficients."""

    __slots__ = ("coeffs",)

    def __init__(self, coeffs):
        c = np.atleast_1d(np.asarray(coeffs, dtype=float)).copy()
        nz = np.nonzero(c)[0]
        c = c[: nz[-1] + 1] if len(nz) else c[:1] * 0.0
        c.setflags(write=False)
        self.coeffs = c

    @classmethod
    def const(cls, v: float) -> "Poly":
        return cls([v])

    @classmethod
    def monomial(cls, j: int, a: float = 1.0) -> "Poly":
        c = np.zeros(j + 1)
        c[j] = a
        return cls(c)

    @classmethod
    def from_roots(cls, roots, lead: float = 1.0) -> "Poly":
        return cls(lead * np.polynomial.polynomial.polyfromroots(list(roots)))

    @property
    def degree(self) -> int:
        """Degree; the zero polynomial reports ``-1``."""
        if len(self.coeffs) == 1 and self.coeffs[0] == 0:
            return -1
        return len(self.coeffs) - 1

    def is_zero(self) -> bool:
        return self.degree == -1

    def is_constant(self) -> bool:
        return self.degree <= 0

    def __call__(self, y):
        return np.polynomial.polynomial.polyval(y, self.coeffs)

    def deriv(self) -> "Poly":
        if len(self.coeffs) == 1:
            return Poly([0.0])
        return Poly(np.polynomial.polynomial.polyder(self.coeffs))

    def antideriv(self) -> "Poly":
        """Antiderivative vanishing at 0."""
        return Poly(np.polynomial.polynomial.polyint(self.coeffs))

    def __add__(self, other):
        if not isinstance(other, Poly):
            other = Poly.const(other)
        return Poly(np.polynomial.polynomial.polyadd(self.coeffs, other.coeffs))

    __radd__ = __add__

    def __neg__(self):
        return Poly(-self.coeffs)

    def __sub__(self, other):
        if not isinstance(other, Poly):
            other = Poly.const(other)
        return self + (-other)

    def __rsub__(self, other):
        return (-self) + other

    def __mul__(self, other):
        if isinstance(other, Poly):
            return Poly(np.polynomial.polynomial.polymul(self.coeffs, other.coeffs))
        return Poly(self.coeffs * float(other))

    __rmul__ = __mul__

    def __eq__(self, other):
        return isinstance(other, Poly) and np.array_equal(self.coeffs, other.coeffs)

    def __hash__(self):
        return hash(tuple(self.coeffs))

    def __repr__(self):
        return f"Poly({list(self.coeffs)})"

    def compose_affine(self, a: float, b: float) -> "Poly":
        """Return ``y -> p(a y + b)``."""
        out = Poly([0.0])
        lin = Poly([b, a])
        power = Poly([1.0])
        for c in self.coeffs:
            out = out + power * c
            power = power * lin
        return out


# -- Lagrange interpolation --------------------------------------------------

def barycentric_weights(nodes: Sequence[float]) -> np.ndarray:
    x = np.asarray(nodes, dtype=float)
    diff = x[:, None] - x[None, :]
    np.fill_diagonal(diff, 1.0)
    if np.any(diff == 0):
        raise ValueError("interpolation nodes must be pairwise distinct")
    return 1.0 / diff.prod(axis=1)


def lagrange_basis(nodes: Sequence[float]) -> list[Poly]:
    """The cardinal polynomials ``l_j`` with ``l_j(x_k) = [j == k]``."""
    x = np.asarray(nodes, dtype=float)
    w = barycentric_weights(x)
    basis = []
    for j in range(len(x)):
        others = np.delete(x, j)
        basis.append(Poly(w[j] * np.polynomial.polynomial.polyfromroots(others)))
    return basis


def lagrange(nodes: Sequence[float], values: Sequence[float]) -> Poly:
    """Interpolating polynomial of degree < len(nodes)."""
    if len(nodes) != len(values):
        raise ValueError("nodes and values differ in length")
    x = np.asarray(nodes, dtype=float)
    v = np.asarray(values, dtype=float)
    if len(x) == 1:
        barycentric_weights(x)
        return Poly.const(v[0])
    # expand about the node centroid, then shift back; keeps the
    # monomial expansion well conditioned for short intervals far from 0
    c = float(x.mean())
    s = float(np.ptp(x)) or 1.0
    t = (x - c) / s
    w = barycentric_weights(t)
    coef = np.zeros(len(x))
    for j in range(len(x)):
        coef += v[j] * w[j] * np.polynomial.polynomial.polyfromroots(np.delete(t, j))
    return Poly(coef).compose_affine(1.0 / s, -c / s)


# -- exact integer polynomial arithmetic (Sturm backend) -----------------------
#
# Float coefficients are dyadic rationals; scaling by a common power of two
# gives integer coefficients.  Sturm chains are built as primitive
# pseudo-remainder sequences with positive multipliers, so every element has
# the sign pattern of the classical chain.  Points are dyadic rationals
# ``num / 2^e`` and signs are evaluated exactly on homogenized integers.

def _int_coeffs(p: Poly) -> list[int]:
    fr = [Fraction(float(c)) for c in p.coeffs]
    den = 1
    for f in fr:
        den = max(den, f.denominator)
    out = [int(f * den) for f in fr]
    return _primitive(out)


def _trim(c: list[int]) -> list[int]:
    while len(c) > 1 and c[-1] == 0:
        c.pop()
    return c


def _primitive(c: list[int]) -> list[int]:
    g = 0
    for x in c:
        g = math.gcd(g, x)
    if g > 1:
        c = [x // g for x in c]
    return _trim(c)


def _ideriv(c: list[int]) -> list[int]:
    if len(c) == 1:
        return [0]
    return _primitive([c[i] * i for i in range(1, len(c))])


def _is_zero(c) -> bool:
    return len(c) == 1 and c[0] == 0


def _prem(a: list[int], b: list[int]) -> list[int]:
    """Remainder of ``|lc(b)|^k a`` by ``b``: same sign pattern as the true remainder."""
    a = list(a)
    lb = b[-1]
    m = abs(lb)
    sb = 1 if lb > 0 else -1
    while len(a) >= len(b) and not _is_zero(a):
        shift = len(a) - len(b)
        f = a[-1] * sb
        a = [x * m for x in a]
        for i, bc in enumerate(b):
            a[i + shift] -= f * bc
        a.pop()
        a = _trim(a) if a else [0]
    return a


def _idiv_exact(a: list[int], b: list[int]) -> list[int]:
    """Quotient ``a / b`` over the rationals, returned as a primitive integer polynomial."""
    fa = [Fraction(x) for x in a]
    q = [Fraction(0)] * (len(a) - len(b) + 1)
    for shift in range(len(a) - len(b), -1, -1):
        f = fa[shift + len(b) - 1] / b[-1]
        q[shift] = f
        for i, bc in enumerate(b):
            fa[i + shift] -= f * bc
    den = 1
    for f in q:
        den = den * f.denominator // math.gcd(den, f.denominator)
    return _primitive([int(f * den) for f in q])


def _sign(v) -> int:
    return (v > 0) - (v < 0)


def _dyadic(x: float) -> tuple[int, int]:
    num, den = Fraction(x).as_integer_ratio()
    return num, den.bit_length() - 1


def _isign(c: list[int], num: int, e: int) -> int:
    """Sign of ``c(num / 2^e)``."""
    acc = 0
    scale = 1
    for coef in reversed(c):
        acc = acc * num + coef * scale
        scale <<= e
    # acc equals c(x) * 2^(e*deg), up to the first shift which is harmless
    return _sign(acc)


def sturm_sequence(c: list[int]) -> list[list[int]]:
    seq = [c, _ideriv(c)]
    while len(seq[-1]) > 1:
        r = _prem(seq[-2], seq[-1])
        if _is_zero(r):
            break
        seq.append(_primitive([-x for x in r]))
    return seq


def _variations(seq, pt: tuple[int, int]) -> int:
    signs = [s for s in (_isign(p, *pt) for p in seq) if s != 0]
    return sum(1 for a, b in zip(signs, signs[1:]) if a != b)


@dataclass(frozen=True)
class RootList:
    """Isolated real roots of a polynomial on ``[lo, hi]``."""
    brackets: tuple[tuple[float, float], ...]
    roots: tuple[float, ...]
    tol: float = TAU_ROOT

    def __len__(self):
        return len(self.roots)


def isolate_roots(p: Poly, I: Interval, tol: float = TAU_ROOT) -> RootList:
    """All distinct real roots of ``p`` in the closed interval ``[I.lo, I.hi]``."""
    if p.is_zero():
        raise ValueError("the zero polynomial has no isolated roots")
    return _isolate(p, float(I.lo), float(I.hi), tol)


def _isolate(p: Poly, a: float, b: float, tol: float) -> RootList:
    if p.is_constant():
        return RootList((), (), tol)
    c = _int_coeffs(p)
    seq = sturm_sequence(c)
    if len(seq[-1]) > 1:
        # repeated roots: the chain ends at gcd(p, p'); refine on the square-free part
        c = _idiv_exact(c, seq[-1])
        seq = sturm_sequence(c)
    found: list[tuple[float, float]] = []
    if _isign(c, *_dyadic(a)) == 0:
        found.append((a, a))
    # Sturm counts distinct roots in (a, b]
    stack = [(a, b, _variations(seq, _dyadic(a)), _variations(seq, _dyadic(b)))]
    while stack:
        lo, hi, vlo, vhi = stack.pop()
        n = vlo - vhi
        if n <= 0:
            continue
        mid = lo + (hi - lo) / 2
        if n == 1 or not lo < mid < hi:
            found.append(_refine(c, lo, hi, tol))
            continue
        vmid = _variations(seq, _dyadic(mid))
        stack.append((mid, hi, vmid, vhi))
        stack.append((lo, mid, vlo, vmid))
    found.sort()
    brackets = tuple(found)
    roots = tuple(l + (h - l) / 2 for l, h in found)
    return RootList(brackets, roots, tol)


def _refine(c: list[int], a: float, b: float, tol: float) -> tuple[float, float]:
    """Shrink ``(a, b]`` holding one simple root until its width is below ``tol``."""
    shi = _isign(c, *_dyadic(b))
    if shi == 0:
        return b, b
    # common power-of-two scale keeps the float copy finite; underflowed
    # coefficients are covered by the absolute slack ``tiny``
    shift = max(0, max(abs(x).bit_length() for x in c) - 1000)
    fc = [float(Fraction(x, 1 << shift)) for x in c]
    ac = [abs(x) for x in fc]
    gamma = 4 * len(fc) * 2.0 ** -53
    tiny = len(fc) * 2.0 ** -1070 * max(1.0, abs(a), abs(b)) ** len(fc)
    while b - a > tol:
        mid = a + (b - a) / 2
        if not a < mid < b:
            break
        val = 0.0
        mag = 0.0
        for coef, ab in zip(reversed(fc), reversed(ac)):
            val = val * mid + coef
            mag = mag * abs(mid) + ab
        if abs(val) > gamma * mag + tiny:
            sm = _sign(val)
        else:
            sm = _isign(c, *_dyadic(mid))
            if sm == 0:
                return mid, mid
        if sm == shi:
            b = mid
        else:
            a = mid
    return a, b


# -- norms and sublevel sets -------------------------------------------------

def critical_points(p: Poly, I: Interval) -> tuple[float, ...]:
    dp = p.deriv()
    if dp.is_constant():
        return ()
    return isolate_roots(dp, I).roots


def sup_norm(p: Poly, I: Interval) -> float:
    """Max of ``|p|`` over the closure of ``I``."""
    pts = [I.lo, I.hi, *critical_points(p, I)]
    return float(np.max(np.abs(p(np.asarray(pts)))))


def sublevel_measure(p: Poly, I: Interval, eta: float) -> float:
    """Lebesgue measure of ``{y in I : |p(y)| < eta}``."""
    if eta <= 0:
        raise ValueError("eta must be positive")
    a, b = I.lo, I.hi
    if p.is_constant():
        return (b - a) if abs(float(p.coeffs[0])) < eta else 0.0
    cuts = {a, b}
    for shifted in (p - eta, p + eta):
        cuts.update(isolate_roots(shifted, I).roots)
    cuts = sorted(x for x in cuts if a <= x <= b)
    total = 0.0
    for lo, hi in zip(cuts, cuts[1:]):
        if hi > lo and abs(p((lo + hi) / 2)) < eta:
            total += hi - lo
    return total


def dist_sup(p1: Poly, p2: Poly, A: Interval) -> float:
    return sup_norm(p1 - p2, A)


def delta_q(q: Poly, J: Interval) -> float:
    """``sup_J |q|`` measured in units of ``|J|^-1``."""
    if not J.length > 0:
        raise ValueError("empty interval")
    return sup_norm(q, J) * J.length


# -- appendix oracles ---------------------------------------------------------

def default_c(d: int) -> float:
    return float(d) ** d


@dataclass(frozen=True)
class BoundCheck:
    value: float
    bound: float
    passed: bool
    params: dict = field(default_factory=dict)


def lemma_a_check(q: Poly, I: Interval, J: Interval, d: int, c: float | None = None) -> BoundCheck:
    """Growth of ``q`` from ``J`` to ``I``: ratio of sup norms against ``c (|I|/|J|)^(d-1)``."""
    if q.degree > d - 1:
        raise ValueError("degree exceeds d - 1")
    if J.lo < I.lo or J.hi > I.hi:
        raise ValueError("J must lie inside I")
    nj = sup_norm(q, J)
    if nj == 0:
        raise ValueError("q vanishes on J")
    c = default_c(d) if c is None else c
    ratio = sup_norm(q, I) / nj
    bound = c * (I.length / J.length) ** (d - 1)
    return BoundCheck(ratio, bound, ratio <= bound, {"d": d, "c": c})


def lemma_b_check(q: Poly, I: Interval, eta: float, d: int, c: float | None = None) -> BoundCheck:
    """Sublevel-set measure against ``c (eta/||q||)^(1/(d-1)) |I|``."""
    if q.is_constant():
        raise ValueError("q must be nonconstant")
    if q.degree > d - 1:
        raise ValueError("degree exceeds d - 1")
    c = default_c(d) if c is None else c
    meas = sublevel_measure(q, I, eta)
    bound = c * (eta / sup_norm(q, I)) ** (1.0 / (d - 1)) * I.length
    return BoundCheck(meas, bound, meas <= bound, {"d": d, "c": c, "eta": eta})


def lemma_c_constant(q: Poly, q_center: Poly, I: Interval) -> float:
    """``||q - q_center||`` on ``13 I`` in units of ``|I|^-1``."""
    from .dyadic import tilde
    return dist_sup(q, q_center, tilde(I)) * I.length


def lemma_c_bound(d: int) -> float:
    return 13.0 ** (d - 1) * float(d) ** (2 * d)


def interpolate_on(I: Interval, values: Sequence[float]) -> Poly:
    """Polynomial taking ``values`` at the node system of ``I``."""
    return lagrange(node_points(I, len(values)), values)
