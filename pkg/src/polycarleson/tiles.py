"""Tiles: boxes of degree ``d-1`` polynomials over a dyadic time interval.

A tile ``P = [alpha^1, ..., alpha^d, I]`` holds the polynomials whose values at
the node system of ``I`` fall in the frequency intervals ``alpha^j``.  Tiles
carry a rational dilation factor, so ``aP`` is represented exactly and all
order relations are decided in rational arithmetic.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field, replace
from fractions import Fraction
from functools import lru_cache
from typing import Iterable, Sequence

import numpy as np
from scipy.optimize import linprog, minimize_scalar

from .dyadic import DyadicInterval, node_fractions, node_points, star
from .polyalg import Poly, lagrange

GRID_DEFAULT = 257


@dataclass(frozen=True, order=True, eq=True)
class Tile:
    time: DyadicInterval
    freq: tuple[DyadicInterval, ...]
    dil: Fraction = Fraction(1)
    _hash: int = field(default=0, init=False, repr=False, compare=False)

    def __post_init__(self):
        for a in self.freq:
            if a.scale != -self.time.scale:
                raise ValueError("frequency intervals must have length |I|^-1")
        # tiles key many dicts and caches; hash once
        object.__setattr__(self, "_hash", hash((self.time, self.freq, self.dil)))

    def __hash__(self) -> int:
        return self._hash

    @property
    def d(self) -> int:
        return len(self.freq)

    @property
    def scale(self) -> int:
        return self.time.scale

    @property
    def undilated(self) -> bool:
        return self.dil == 1

    def dilate(self, a) -> "Tile":
        a = Fraction(a)
        if a <= 0:
            raise ValueError("dilation factor must be positive")
        return replace(self, dil=self.dil * a)

    def base(self) -> "Tile":
        return replace(self, dil=Fraction(1))

    @classmethod
    def containing(cls, q: Poly, I: DyadicInterval, d: int) -> "Tile":
        """The undilated tile over ``I`` holding ``q``."""
        vals = q(np.asarray(node_points(I, d)))
        return cls(I, tuple(DyadicInterval.containing(float(v), -I.scale) for v in vals))


@lru_cache(maxsize=None)
def nodes(P: Tile) -> np.ndarray:
    return np.asarray(node_points(P.time, P.d))


@lru_cache(maxsize=None)
def box_exact(P: Tile) -> tuple[tuple[Fraction, Fraction], ...]:
    """Exact ``[lo, hi)`` bounds of the (possibly dilated) frequency intervals."""
    out = []
    for a in P.freq:
        c = (a.lo_exact + a.hi_exact) / 2
        half = P.dil * (a.hi_exact - a.lo_exact) / 2
        out.append((c - half, c + half))
    return tuple(out)


@lru_cache(maxsize=None)
def box(P: Tile) -> tuple[np.ndarray, np.ndarray]:
    lo = np.array([float(a) for a, _ in box_exact(P)])
    hi = np.array([float(b) for _, b in box_exact(P)])
    return lo, hi


def centers(P: Tile) -> np.ndarray:
    return np.array([a.center for a in P.freq])


def half_widths(P: Tile) -> np.ndarray:
    return np.array([float(P.dil) * a.length / 2 for a in P.freq])


def contains_poly(P: Tile, q: Poly) -> bool:
    if q.degree > P.d - 1:
        raise ValueError("polynomial degree exceeds d - 1")
    v = q(nodes(P))
    lo, hi = box(P)
    return bool(np.all((lo <= v) & (v < hi)))


@lru_cache(maxsize=None)
def central_poly(P: Tile) -> Poly:
    return lagrange(nodes(P), centers(P))


def neighbors(P: Tile) -> list[Tile]:
    if not P.undilated:
        raise ValueError("neighbors are defined for undilated tiles")
    choices = [(DyadicInterval(a.scale, a.index - 1), a, DyadicInterval(a.scale, a.index + 1))
               for a in P.freq]
    return [Tile(P.time, combo) for combo in itertools.product(*choices)]


def ceil_fn(x: float) -> float:
    return 1.0 / (1.0 + abs(x))


# -- order relations ---------------------------------------------------------

def _unit_pair(I1: DyadicInterval, I2: DyadicInterval) -> tuple[DyadicInterval, DyadicInterval]:
    """Rescale so that ``I2`` becomes ``[0, 1)``; transfer data is invariant under this map."""
    shift = I1.scale - I2.scale
    return DyadicInterval(shift, I1.index - (I2.index << shift)), DyadicInterval(0, 0)


def _transfer(I1: DyadicInterval, I2: DyadicInterval, d: int) -> tuple[tuple[Fraction, ...], ...]:
    """Matrix ``L[i][j] = l_j(x_{I1}^i)`` with ``l_j`` the cardinal basis on the nodes of ``I2``."""
    return _transfer_unit(*_unit_pair(I1, I2), d)


@lru_cache(maxsize=1 << 14)
def _transfer_float(I1: DyadicInterval, I2: DyadicInterval, d: int) -> np.ndarray:
    return np.array([[float(x) for x in row] for row in _transfer(I1, I2, d)])


@lru_cache(maxsize=1 << 14)
def _transfer_unit(I1: DyadicInterval, I2: DyadicInterval, d: int) -> tuple[tuple[Fraction, ...], ...]:
    x2 = node_fractions(I2, d)
    x1 = node_fractions(I1, d)
    rows = []
    for y in x1:
        row = []
        for j, xj in enumerate(x2):
            num = Fraction(1)
            for k, xk in enumerate(x2):
                if k != j:
                    num *= (y - xk) / (xj - xk)
            row.append(num)
        rows.append(tuple(row))
    return tuple(rows)


def _image_range(L_row, bounds2):
    """Range of ``sum_j L_j v_j`` over the half-open box; returns (lo, lo_attained, hi, hi_attained)."""
    lo = hi = Fraction(0)
    lo_att = hi_att = True
    for c, (a, b) in zip(L_row, bounds2):
        if c > 0:
            lo += c * a
            hi += c * b
            hi_att = False
        elif c < 0:
            lo += c * b
            hi += c * a
            lo_att = False
    return lo, lo_att, hi, hi_att


@lru_cache(maxsize=1 << 20)
def trianglelefteq(P1: Tile, P2: Tile) -> bool:
    """``P1 ⊴ P2``: ``I1 ⊆ I2`` and every polynomial of ``P2`` lies in ``P1``."""
    if P1.d != P2.d or not P2.time.contains(P1.time):
        return False
    # float screen; exact arithmetic only when an image endpoint is near a face
    Lf = _transfer_float(*_unit_pair(P1.time, P2.time), P1.d)
    lo1, hi1 = box(P1)
    lo2, hi2 = box(P2)
    Lp, Ln = np.maximum(Lf, 0), np.minimum(Lf, 0)
    img_lo = Lp @ lo2 + Ln @ hi2
    img_hi = Lp @ hi2 + Ln @ lo2
    tol = 1e-9 * (np.abs(Lf) @ (np.abs(lo2) + np.abs(hi2)) + np.abs(lo1) + np.abs(hi1) + 1.0)
    if np.any(img_lo < lo1 - tol) or np.any(img_hi > hi1 + tol):
        return False
    if np.all(img_lo > lo1 + tol) and np.all(img_hi < hi1 - tol):
        return True
    L = _transfer(P1.time, P2.time, P1.d)
    b1, b2 = box_exact(P1), box_exact(P2)
    for row, (a1, c1) in zip(L, b1):
        lo, _, hi, hi_att = _image_range(row, b2)
        # values > lo or >= lo; either way need lo >= a1
        if lo < a1:
            return False
        if hi > c1 or (hi == c1 and hi_att):
            return False
    return True


@lru_cache(maxsize=1 << 20)
def leq(P1: Tile, P2: Tile) -> bool:
    """``P1 ≤ P2``: ``I1 ⊆ I2`` and some polynomial lies in both tiles."""
    if P1.d != P2.d or not P2.time.contains(P1.time):
        return False
    b1, b2 = box_exact(P1), box_exact(P2)
    if P1.time == P2.time:
        return all(max(a1, a2) < min(c1, c2) for (a1, c1), (a2, c2) in zip(b1, b2))
    L = _transfer(P1.time, P2.time, P1.d)
    # necessary condition: each node image range meets the target interval
    for row, (a1, c1) in zip(L, b1):
        lo, _, hi, hi_att = _image_range(row, b2)
        if hi < a1 or (hi == a1 and not hi_att) or lo >= c1:
            return False
    if P1.d <= FM_MAX_D:
        return _fm_feasible(L, b1, b2)
    return _lp_feasible(L, b1, b2)


FM_MAX_D = 3


def _certificates(I1: DyadicInterval, I2: DyadicInterval, d: int):
    return _certificates_unit(*_unit_pair(I1, I2), d)


@lru_cache(maxsize=1 << 14)
def _certificates_unit(I1: DyadicInterval, I2: DyadicInterval, d: int):
    """Fourier-Motzkin certificates for ``P ≤ Q`` with ``I_P = I1``, ``I_Q = I2``.

    The system ``a2 <= v < c2``, ``a1 <= L v < c1`` has a coefficient matrix
    fixed by the two intervals, so elimination can be run once on symbolic
    right-hand sides.  Each certificate is a nonnegative combination ``lam``
    of the rows with zero coefficients; the system is feasible iff
    ``lam . rhs`` is positive (strict rows involved) or nonnegative for all.
    Returns ``(lam_Q, lam_P, strict)`` as float arrays plus the exact rows.
    """
    L = _transfer(I1, I2, d) if I1 != I2 else tuple(
        tuple(Fraction(int(i == j)) for j in range(d)) for i in range(d))
    n_rows = 4 * d
    rows = []
    for j in range(d):
        e = tuple(Fraction(int(i == j)) for i in range(d))
        rows.append((tuple(-x for x in e), 2 * j, False))
        rows.append((e, 2 * j + 1, True))
    for i, Li in enumerate(L):
        rows.append((tuple(-x for x in Li), 2 * d + 2 * i, False))
        rows.append((tuple(Li), 2 * d + 2 * i + 1, True))
    sys_ = []
    for coef, k, st in rows:
        lam = [Fraction(0)] * n_rows
        lam[k] = Fraction(1)
        sys_.append((coef, tuple(lam), st))
    for var in range(d):
        pos = [r for r in sys_ if r[0][var] > 0]
        neg = [r for r in sys_ if r[0][var] < 0]
        keep = [r for r in sys_ if r[0][var] == 0]
        seen = set()
        for (cp, lp, sp), (cn, ln, sn) in itertools.product(pos, neg):
            fp, fn = cp[var], -cn[var]
            coef = tuple(Fraction(0) if i <= var else x / fp + y / fn
                         for i, (x, y) in enumerate(zip(cp, cn)))
            lam = tuple(x / fp + y / fn for x, y in zip(lp, ln))
            key = (lam, sp or sn)
            if key not in seen:
                seen.add(key)
                keep.append((coef, lam, sp or sn))
        sys_ = keep
    lam = np.array([[float(x) for x in r[1]] for r in sys_]).reshape(-1, n_rows)
    strict = np.array([r[2] for r in sys_], dtype=bool)
    return lam[:, :2 * d], lam[:, 2 * d:], strict


def _rhs(P: Tile) -> np.ndarray:
    """Right-hand sides ``(-a_0, c_0, -a_1, c_1, ...)`` of the box of ``P``."""
    lo, hi = box(P)
    return np.column_stack([-lo, hi]).ravel()


def leq_matrix(Ps: Sequence[Tile], Qs: Sequence[Tile], tol: float = 1e-9) -> np.ndarray:
    """Boolean matrix ``[P ≤ Q]`` for tiles ``Ps`` over one interval and ``Qs`` over another.

    Certificates are evaluated in floats; entries within ``tol`` of a tie are
    decided exactly by ``leq``.
    """
    out = np.zeros((len(Ps), len(Qs)), dtype=bool)
    if not Ps or not Qs:
        return out
    I1, I2, d = Ps[0].time, Qs[0].time, Ps[0].d
    if not I2.contains(I1):
        return out
    lamQ, lamP, strict = _certificates(I1, I2, d)
    RP = np.array([_rhs(P) for P in Ps])
    RQ = np.array([_rhs(Q) for Q in Qs])
    SP, SQ = RP @ lamP.T, RQ @ lamQ.T
    AP, AQ = np.abs(RP) @ np.abs(lamP).T, np.abs(RQ) @ np.abs(lamQ).T
    S = SP[:, None, :] + SQ[None, :, :]
    slack = tol * (AP[:, None, :] + AQ[None, :, :] + 1.0)
    clear_ok = np.where(strict, S > slack, S >= slack)
    clear_bad = np.where(strict, S <= -slack, S < -slack)
    ok = clear_ok.all(axis=2)
    bad = clear_bad.any(axis=2)
    out[ok] = True
    for i, j in zip(*np.nonzero(~ok & ~bad)):
        out[i, j] = leq(Ps[i], Qs[j])
    return out


def leq_filter(P: Tile, Qs: Iterable[Tile], tol: float = 1e-9) -> list[Tile]:
    """The ``Q`` among ``Qs`` with ``P ≤ Q``."""
    groups: dict[DyadicInterval, list[Tile]] = {}
    for Q in Qs:
        if Q.d == P.d and Q.time.contains(P.time):
            groups.setdefault(Q.time, []).append(Q)
    out = []
    for grp in groups.values():
        if len(grp) < 4:
            out.extend(Q for Q in grp if leq(P, Q))
        else:
            out.extend(Q for Q, k in zip(grp, leq_matrix([P], grp, tol)[0]) if k)
    return out


def _normalize(coef, rhs, strict):
    piv = next((abs(c) for c in coef if c != 0), None)
    if piv is None:
        return None
    return tuple(c / piv for c in coef), rhs / piv, strict


def _fm_system(L, b1, b2, conv=Fraction, shift=0.0):
    """Rows ``coef . v <= rhs`` with a strict flag; ``shift`` moves each face outward by that fraction of its width."""
    d = len(b2)
    ineqs = []
    for j, (a, c) in enumerate(b2):
        e = [conv(0)] * d
        e[j] = conv(1)
        pad = conv(shift) * conv(c - a)
        ineqs.append((tuple(-x for x in e), -conv(a) + pad, False))
        ineqs.append((tuple(e), conv(c) + pad, True))
    for row, (a, c) in zip(L, b1):
        r = tuple(conv(x) for x in row)
        pad = conv(shift) * conv(c - a)
        ineqs.append((tuple(-x for x in r), -conv(a) + pad, False))
        ineqs.append((r, conv(c) + pad, True))
    return ineqs


def _fm_eliminate(ineqs, d: int) -> bool:
    for var in range(d):
        pos, neg, keep = [], [], []
        for coef, rhs, st in ineqs:
            if coef[var] > 0:
                pos.append((coef, rhs, st))
            elif coef[var] < 0:
                neg.append((coef, rhs, st))
            else:
                keep.append((coef, rhs, st))
        for (cp, rp, sp), (cn, rn, sn) in itertools.product(pos, neg):
            fp, fn = cp[var], -cn[var]
            # eliminated coordinates are set to an exact zero so float rows stay clean
            coef = tuple(0 * x if i <= var else x / fp + y / fn
                         for i, (x, y) in enumerate(zip(cp, cn)))
            keep.append((coef, rp / fp + rn / fn, sp or sn))
        # drop redundant rows: keep the tightest bound per direction
        best: dict = {}
        for coef, rhs, st in keep:
            norm = _normalize(coef, rhs, st)
            if norm is None:
                if rhs < 0 or (rhs == 0 and st):
                    return False
                continue
            key, r, s = norm
            old = best.get(key)
            if old is None or r < old[0] or (r == old[0] and s and not old[1]):
                best[key] = (r, s)
        ineqs = [(k, r, s) for k, (r, s) in best.items()]
    return True


FLOAT_MARGIN = 1e-7


def _fm_feasible(L, b1, b2) -> bool:
    """Fourier-Motzkin elimination with strict-inequality flags.

    A float pass on the enlarged and on the shrunk system settles clear
    cases; only near-ties are redone over the rationals.
    """
    d = len(b2)
    if not _fm_eliminate(_fm_system(L, b1, b2, float, FLOAT_MARGIN), d):
        return False
    if _fm_eliminate(_fm_system(L, b1, b2, float, -FLOAT_MARGIN), d):
        return True
    return _fm_eliminate(_fm_system(L, b1, b2), d)


def _lp_feasible(L, b1, b2, tol: float = 1e-9) -> bool:
    """Float LP maximizing the slack of the strict constraints."""
    d = len(b2)
    A, b = [], []
    for j, (a, c) in enumerate(b2):
        w = float(c - a)
        e = np.zeros(d + 1)
        e[j] = -1.0 / w
        A.append(e.copy()); b.append(-float(a) / w)
        e[j] = 1.0 / w; e[d] = 1.0
        A.append(e); b.append(float(c) / w)
    for row, (a, c) in zip(L, b1):
        w = float(c - a)
        r = np.array([float(x) for x in row] + [0.0])
        A.append(-r / w); b.append(-float(a) / w)
        r2 = r / w
        r2[d] = 1.0
        A.append(r2); b.append(float(c) / w)
    cost = np.zeros(d + 1)
    cost[d] = -1.0
    bounds = [(None, None)] * d + [(None, 1.0)]
    res = linprog(cost, A_ub=np.array(A), b_ub=np.array(b), bounds=bounds, method="highs")
    return bool(res.status == 0 and -res.fun > tol)


def strictly_less(P1: Tile, P2: Tile) -> bool:
    return P1 != P2 and leq(P1, P2) and not leq(P2, P1)


def comparable(P1: Tile, P2: Tile) -> bool:
    return leq(P1, P2) or leq(P2, P1)


# -- geometric factors -------------------------------------------------------

def basis_values(P: Tile, y: np.ndarray) -> np.ndarray:
    """``B[i, j] = l_j(y_i)`` for the cardinal basis on the nodes of ``P``."""
    x = nodes(P)
    y = np.asarray(y, dtype=float)
    d = len(x)
    B = np.ones((len(y), d))
    for j in range(d):
        for k in range(d):
            if k != j:
                B[:, j] *= (y - x[k]) / (x[j] - x[k])
    return B


def central_values(P: Tile, y) -> np.ndarray:
    return basis_values(P, y) @ centers(P)


def box_radius(P: Tile, y) -> np.ndarray:
    """Half-width of ``{q(y) : q in closure(P)}`` at each ``y``."""
    return np.abs(basis_values(P, y)) @ half_widths(P)


@dataclass(frozen=True)
class PairFactor:
    delta: float
    ceil_delta: float
    resolution: int
    error_bound: float = 0.0
    swapped: bool = False
    out_of_scope: bool = False


def _sup_refined(g, a: float, b: float, G: int) -> tuple[float, float]:
    ys = np.linspace(a, b, G)
    vals = g(ys)
    i = int(np.argmax(vals))
    best = float(vals[i])
    lo, hi = ys[max(i - 1, 0)], ys[min(i + 1, G - 1)]
    if hi > lo and best > 0:
        res = minimize_scalar(lambda t: -float(g(np.array([t]))[0]), bounds=(lo, hi),
                              method="bounded", options={"xatol": (hi - lo) * 1e-6})
        best = max(best, -float(res.fun))
    return best, (b - a) / (G - 1)


def pair_delta(P1: Tile, P2: Tile, G: int = GRID_DEFAULT) -> PairFactor:
    """Normalized separation of two tiles over the shorter time interval."""
    if P1.d != P2.d:
        raise ValueError("tiles of different degree")
    swapped = P1.time.length < P2.time.length
    if swapped:
        P1, P2 = P2, P1
    if P1 == P2:
        return PairFactor(0.0, 1.0, G, 0.0, swapped)
    I2 = P2.time
    c1, c2 = centers(P1), centers(P2)
    h1, h2 = half_widths(P1), half_widths(P2)

    def gap(y):
        B1, B2 = basis_values(P1, y), basis_values(P2, y)
        diff = B1 @ c1 - B2 @ c2
        return np.maximum(0.0, np.abs(diff) - np.abs(B1) @ h1 - np.abs(B2) @ h2)

    sup, step = _sup_refined(gap, I2.lo, I2.hi, G)
    d = P1.d
    # Markov bound on the slope of the gap function over I2
    slope = 0.0
    if d > 1:
        ys = np.linspace(I2.lo, I2.hi, G)
        B1, B2 = basis_values(P1, ys), basis_values(P2, ys)
        mag = np.max(np.abs(B1 @ c1 - B2 @ c2) + np.abs(B1) @ h1 + np.abs(B2) @ h2)
        slope = 2 * (d - 1) ** 2 / I2.length * mag
    err = step / 2 * slope * I2.length
    left1, right1, _ = star(P1.time)
    left2, right2, _ = star(P2.time)
    meets = any(a.intersect(b) is not None and a.intersect(b).length > 0
                for a in (left1, right1) for b in (left2, right2))
    delta = sup * I2.length
    return PairFactor(delta, ceil_fn(delta), G, err, swapped, not meets)


def delta_q_P(q: Poly, P: Tile, G: int = GRID_DEFAULT) -> float:
    """``inf_{q1 in P} sup_{y in I} |q - q1|(y)``, in units of ``|I|^-1``.

    Solved as a discrete Chebyshev problem over ``G`` sample points with the
    node values of ``q1`` confined to the closed box of ``P``.
    """
    if q.degree > P.d - 1:
        raise ValueError("polynomial degree exceeds d - 1")
    I = P.time
    ys = np.linspace(I.lo, I.hi, G)
    B = basis_values(P, ys)
    target = q(ys)
    lo, hi = box(P)
    d = P.d
    scale = float(np.max(np.abs(target))) + float(np.max(np.abs(hi))) + 1.0
    # variables v_1..v_d, s ; minimize s with |target - B v| <= s
    A = np.block([[B, -np.ones((G, 1))], [-B, -np.ones((G, 1))]]) / scale
    b = np.concatenate([target, -target]) / scale
    cost = np.zeros(d + 1)
    cost[d] = 1.0
    bounds = [(float(l), float(h)) for l, h in zip(lo, hi)] + [(0, None)]
    res = linprog(cost, A_ub=A, b_ub=b, bounds=bounds, method="highs")
    if res.status != 0:
        raise RuntimeError(f"Chebyshev LP failed: {res.message}")
    return float(res.x[d]) * I.length


def interaction_poly(P1: Tile, P2: Tile) -> Poly:
    return central_poly(P1) - central_poly(P2)


@dataclass(frozen=True)
class EquivalenceCheck:
    lhs: float
    rhs: float
    ratio: float


def delta_equivalence_check(P1: Tile, P2: Tile, G: int = GRID_DEFAULT) -> EquivalenceCheck:
    """Compare ``⌈Δ(P1,P2)⌉`` with ``max(⌈Δ_{q_P1}(P2)⌉, ⌈Δ_{q_P2}(P1)⌉)``."""
    lhs = pair_delta(P1, P2, G).ceil_delta
    rhs = max(ceil_fn(delta_q_P(central_poly(P1), P2, G)),
              ceil_fn(delta_q_P(central_poly(P2), P1, G)))
    return EquivalenceCheck(lhs, rhs, lhs / rhs)


# -- serialization -----------------------------------------------------------

def tile_to_line(P: Tile) -> str:
    if not P.undilated:
        raise ValueError("only undilated tiles are serialized")
    freq = " ".join(f"{a.scale} {a.index}" for a in P.freq)
    return f"{P.d} {P.time.scale} {P.time.index} | {freq}"


def tile_from_line(line: str) -> Tile:
    head, _, tail = line.partition("|")
    d, k, n = (int(t) for t in head.split())
    nums = [int(t) for t in tail.split()]
    if len(nums) != 2 * d:
        raise ValueError(f"expected {d} frequency intervals in {line!r}")
    freq = tuple(DyadicInterval(nums[2 * j], nums[2 * j + 1]) for j in range(d))
    return Tile(DyadicInterval(k, n), freq)


def write_tiles(path, tiles: Iterable[Tile]) -> None:
    with open(path, "w") as fh:
        for P in tiles:
            fh.write(tile_to_line(P) + "\n")


def read_tiles(path) -> list[Tile]:
    with open(path) as fh:
        return [tile_from_line(line) for line in fh if line.strip() and not line.startswith("#")]


def sample_geometric_tile(P: Tile, n: int = 33) -> list[tuple[float, float, float, float]]:
    """Rows ``(x, q_P(x), lower, upper)`` outlining the geometric tile for plotting."""
    xs = np.linspace(P.time.lo, P.time.hi, n)
    qc = central_values(P, xs)
    r = box_radius(P, xs)
    return [(float(x), float(c), float(c - rr), float(c + rr)) for x, c, rr in zip(xs, qc, r)]
