"""Critical sets of an interaction polynomial and Whitney-type partitions.

The separation set is built from dyadic intervals around the small local
minima of ``|q|``; the critical set from windows of half-width ``w`` around
the same minima.  Both are closed up by absorbing short gaps (``merge_E``).
"""

from __future__ import annotations

import json
import math
from fractions import Fraction
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from .dyadic import DyadicInterval, RealInterval, largest_dyadic_in, tilde
from .polyalg import Poly, delta_q, isolate_roots
from .tiles import Tile, ceil_fn, interaction_poly, pair_delta


@dataclass(frozen=True)
class Piece:
    lo: float
    hi: float
    sources: tuple[tuple[float | None, str], ...] = ()

    @property
    def length(self):
        return self.hi - self.lo


@dataclass
class CriticalSetResult:
    pieces: list[Piece]
    params: dict = field(default_factory=dict)
    capped: bool = False

    @property
    def measure(self) -> float:
        return float(sum(p.length for p in self.pieces))

    def contains(self, y: float) -> bool:
        return any(p.lo <= y <= p.hi for p in self.pieces)

    def intervals(self) -> list[RealInterval]:
        return [RealInterval(p.lo, p.hi) for p in self.pieces]

    def to_json(self) -> str:
        return json.dumps({
            "pieces": [{"lo": float(p.lo), "hi": float(p.hi),
                        "sources": [[None if x is None else float(x), s] for x, s in p.sources]} for p in self.pieces],
            "params": {k: (float(v) if isinstance(v, (int, float)) else v) for k, v in self.params.items()},
            "capped": self.capped,
        }, sort_keys=True)


EMPTY = CriticalSetResult([])


# -- local minima ------------------------------------------------------------

def local_minima(q: Poly, eta: float, J: RealInterval) -> list[tuple[float, float]]:
    """Local minima of ``|q|`` on the closed interval ``J`` with value below ``eta``.

    ``|q|`` is monotone between consecutive points of ``{roots of q} ∪
    {roots of q'} ∪ ∂J``, so each candidate is tested against the midpoints
    of its neighboring gaps.
    """
    if q.is_constant():
        raise ValueError("q is constant; the critical sets are empty by convention")
    a, b = J.lo, J.hi
    cand = {a, b}
    cand.update(isolate_roots(q, J).roots)
    dq = q.deriv()
    if not dq.is_constant():
        cand.update(isolate_roots(dq, J).roots)
    pts = sorted(cand)
    absq = lambda y: abs(float(q(y)))
    out = []
    for i, x in enumerate(pts):
        v = absq(x)
        if v >= eta:
            continue
        left = absq((pts[i - 1] + x) / 2) if i > 0 else math.inf
        right = absq((x + pts[i + 1]) / 2) if i + 1 < len(pts) else math.inf
        if v <= left and v <= right:
            out.append((x, v))
    if len(out) > 2 * max(q.degree + 1, 1):
        raise AssertionError(f"{len(out)} local minima exceed 2d")
    return out


# -- the S construction --------------------------------------------------------

@dataclass(frozen=True)
class SIntervals:
    centre: DyadicInterval
    right: DyadicInterval
    left: DyadicInterval
    capped: bool


def _dyadic_delta(qt: Poly, I: DyadicInterval) -> float:
    return delta_q(qt, I.as_real())


def _smallest_containing(qt: Poly, x: float, thr: float, top: int, k_max: int):
    I = DyadicInterval.containing(x, top)
    if not _dyadic_delta(qt, I) > thr:
        return I, True
    # Δ grows along the ancestor chain, so walk down while it stays above thr
    for k in range(top + 1, k_max + 1):
        child = DyadicInterval.containing(x, k)
        if not _dyadic_delta(qt, child) > thr:
            return I, False
        I = child
    return I, False


def _two_adic(x: float) -> int:
    """Smallest ``k`` with ``x`` a multiple of ``2^-k`` (very negative for 0)."""
    if x == 0:
        return -10**9
    num, den = float(x).as_integer_ratio()
    k = den.bit_length() - 1
    while num % 2 == 0:
        num //= 2
        k -= 1
    return k


def _smallest_abutting(qt: Poly, edge: float, side: str, thr: float, top: int, k_max: int):
    """Smallest dyadic interval with an endpoint at ``edge`` on the given side."""
    k_lo = max(top, _two_adic(edge))
    best = None
    for k in range(k_lo, k_max + 1):
        n = round(math.ldexp(edge, k))
        I = DyadicInterval(k, n) if side == "right" else DyadicInterval(k, n - 1)
        if _dyadic_delta(qt, I) > thr:
            best = I
        else:
            break
    if best is None:
        n = round(math.ldexp(edge, k_lo))
        return (DyadicInterval(k_lo, n) if side == "right" else DyadicInterval(k_lo, n - 1)), True
    return best, False


def s_intervals(q: Poly, x_j: float, v: float, c_d: float, top: int = 0, k_max: int = 52) -> SIntervals:
    """The three dyadic intervals around ``x_j`` on which ``q - q(x_j)`` first exceeds ``c_d v``.

    Intervals longer than ``2^-top`` are never considered; hitting that cap is flagged.
    """
    qt = q - float(q(x_j))
    thr = c_d * v
    I1, cap1 = _smallest_containing(qt, x_j, thr, top, k_max)
    I2, cap2 = _smallest_abutting(qt, I1.hi, "right", thr, top, k_max)
    I3, cap3 = _smallest_abutting(qt, I1.lo, "left", thr, top, k_max)
    return SIntervals(I1, I2, I3, cap1 or cap2 or cap3)


# -- gap absorption ------------------------------------------------------------

def merge_E(J: RealInterval, A: Sequence[Piece | tuple]) -> list[Piece]:
    """Union of ``A`` with every complementary gap shorter than an adjacent piece of ``A``."""
    pieces = [p if isinstance(p, Piece) else Piece(p[0], p[1]) for p in A]
    if not pieces:
        return []
    for p, nxt in zip(pieces, pieces[1:]):
        if not p.hi < nxt.lo:
            raise ValueError("pieces must be disjoint and sorted")
    if pieces[0].lo < J.lo or pieces[-1].hi > J.hi:
        raise ValueError("pieces must lie inside J")
    # float inputs such as 0.3 - 0.2 vs 0.2 - 0.1: a gap must be shorter by more than rounding
    slack = 0 if isinstance(J.lo, Fraction) else 1e-12 * max(1.0, abs(J.hi - J.lo))
    out = []
    zero = pieces[0].lo - pieces[0].lo
    lengths = [zero] + [p.length for p in pieces] + [zero]
    edges = [J.lo] + [x for p in pieces for x in (p.lo, p.hi)] + [J.hi]
    for j in range(len(pieces) + 1):
        lo, hi = edges[2 * j], edges[2 * j + 1]
        gap = hi - lo
        if gap > 0 and (gap < lengths[j] - slack or gap < lengths[j + 1] - slack):
            out.append(Piece(lo, hi, ((None, f"gap C_{j + 1}"),)))
    out.extend(pieces)
    return _union(out)


def _union(pieces: Sequence[Piece]) -> list[Piece]:
    """Merge overlapping or touching closed pieces."""
    ps = sorted(pieces, key=lambda p: (p.lo, p.hi))
    out: list[Piece] = []
    for p in ps:
        if out and p.lo <= out[-1].hi:
            last = out[-1]
            out[-1] = Piece(last.lo, max(last.hi, p.hi), last.sources + p.sources)
        else:
            out.append(p)
    return out


def _clip(pieces: Sequence[Piece], J: RealInterval) -> list[Piece]:
    out = []
    for p in pieces:
        lo, hi = max(p.lo, J.lo), min(p.hi, J.hi)
        if lo <= hi:
            out.append(Piece(lo, hi, p.sources))
    return out


# -- the critical sets ---------------------------------------------------------

@dataclass(frozen=True)
class CriticalConstants:
    """Constants of the construction.

    ``c_w``, ``c_v`` and ``c_eta`` scale ``w``, ``v`` and ``eta``; ``c_s``
    scales the threshold ``c_s v`` defining the S-intervals.
    """
    c_w: float
    c_v: float
    c_eta: float
    c_s: float

    @classmethod
    def uniform(cls, c: float) -> "CriticalConstants":
        return cls(c, c, c, c)

    @classmethod
    def default(cls, d: int) -> "CriticalConstants":
        c = float(d) ** d
        return cls(c_w=WINDOW_FACTOR * c, c_v=c, c_eta=LEVEL_FACTOR * c, c_s=c)


# Calibrated so that I_s ⊆ I_c and the near-coincidence containment hold on
# random sweeps with a 4x margin over the smallest passing values.
WINDOW_FACTOR = 16.0
LEVEL_FACTOR = 1024.0


@dataclass(frozen=True)
class Scales:
    J: DyadicInterval
    delta: float
    w: float
    v: float
    eta: float


def critical_scales(q: Poly, J_bar: RealInterval, d: int, eps0: float,
                    consts: CriticalConstants) -> Scales:
    J = largest_dyadic_in(J_bar)
    dl = delta_q(q, J.as_real())
    cd = ceil_fn(dl)
    w = consts.c_w * J.length * cd ** (1.0 / d - eps0)
    v = consts.c_v * cd ** (-2 * eps0)
    eta = consts.c_eta * v / w
    return Scales(J, dl, w, v, eta)


def s_set(q: Poly, J_bar: RealInterval, eta: float, v: float, c_s: float,
          minima=None) -> tuple[list[Piece], bool]:
    minima = local_minima(q, eta, J_bar) if minima is None else minima
    raw, capped = [], False
    top = min(0, math.floor(-math.log2(J_bar.length)) if J_bar.length > 0 else 0)
    for x, _ in minima:
        s = s_intervals(q, x, v, c_s, top=top)
        capped |= s.capped
        raw.append(Piece(s.left.lo, s.right.hi, ((x, "S"),)))
    return _union(_clip(raw, J_bar)), capped


def c_set(q: Poly, J_bar: RealInterval, eta: float, w: float, minima=None) -> list[Piece]:
    minima = local_minima(q, eta, J_bar) if minima is None else minima
    raw = [Piece(x - w, x + w, ((x, "C"),)) for x, _ in minima]
    return _union(_clip(raw, J_bar))


def critical_sets(q: Poly, J_bar: RealInterval, d: int, eps0: float = 0.01,
                  consts: CriticalConstants | None = None,
                  v_override: float | None = None) -> tuple[CriticalSetResult, CriticalSetResult]:
    """Return ``(I_s, I_c)`` for ``q`` on ``J_bar``; both empty when ``q`` is constant."""
    consts = CriticalConstants.default(d) if consts is None else consts
    if q.is_constant() or not J_bar.length > 0:
        params = {"eps0": eps0, "branch": "constant"}
        return CriticalSetResult([], params), CriticalSetResult([], params)
    sc = critical_scales(q, J_bar, d, eps0, consts)
    v = sc.v if v_override is None else v_override
    params = {"eps0": eps0, "w": sc.w, "v": v, "eta": sc.eta, "delta_J": sc.delta,
              "J": [sc.J.scale, sc.J.index], **asdict(consts)}
    minima = local_minima(q, sc.eta, J_bar)
    S, capped = s_set(q, J_bar, sc.eta, v, consts.c_s, minima)
    C = c_set(q, J_bar, sc.eta, sc.w, minima)
    Is = CriticalSetResult(merge_E(J_bar, S), dict(params, stage="S"), capped)
    Ic = CriticalSetResult(merge_E(J_bar, C), dict(params, stage="C"))
    return Is, Ic


def contained_in(A: CriticalSetResult, B: CriticalSetResult, tol: float = 0.0) -> bool:
    """Every piece of ``A`` lies inside a single piece of ``B``."""
    return all(any(b.lo - tol <= a.lo and a.hi <= b.hi + tol for b in B.pieces) for a in A.pieces)


def enlarged_overlap(P1: Tile, P2: Tile) -> RealInterval | None:
    return tilde(P1.time).intersect(tilde(P2.time))


def pair_critical_set(P1: Tile, P2: Tile, eps0: float = 0.01,
                      consts: CriticalConstants | None = None) -> CriticalSetResult:
    J_bar = enlarged_overlap(P1, P2)
    if J_bar is None or not J_bar.length > 0:
        raise ValueError("enlarged time intervals are disjoint")
    return critical_sets(interaction_poly(P1, P2), J_bar, P1.d, eps0, consts)[1]


@dataclass
class CtbsReport:
    passed: bool
    checked: int
    hits: int
    counterexamples: list = field(default_factory=list)
    vacuous: bool = False


def sample_in_tile(P: Tile, rng: np.random.Generator) -> Poly:
    """A random polynomial of the tile: uniform node values in the box."""
    from .tiles import box, nodes
    from .polyalg import lagrange
    lo, hi = box(P)
    vals = lo + (hi - lo) * rng.random(P.d)
    return lagrange(nodes(P), vals)


def ctbs_check(P1: Tile, P2: Tile, eps0: float = 0.01, samples: int = 200,
               rng: np.random.Generator | None = None,
               consts: CriticalConstants | None = None) -> CtbsReport:
    """Sampled check that near-coincidence points of the two tiles fall in ``I_{1,2}``."""
    rng = np.random.default_rng(0) if rng is None else rng
    if P1.time.length < P2.time.length:
        P1, P2 = P2, P1
    q12 = interaction_poly(P1, P2)
    if q12.is_constant():
        return CtbsReport(True, 0, 0, vacuous=True)
    J_bar = enlarged_overlap(P1, P2)
    crit = pair_critical_set(P1, P2, eps0, consts)
    d = P1.d
    thr = pair_delta(P1, P2).ceil_delta ** (-1.0 / d - eps0)
    L2 = P2.time.length
    ys = J_bar.lo + J_bar.length * rng.random(samples)
    hits, bad = 0, []
    for _ in range(max(1, samples // 20)):
        q1, q2 = sample_in_tile(P1, rng), sample_in_tile(P2, rng)
        gap = np.abs(q1(ys) - q2(ys)) * L2
        for y in ys[gap <= thr]:
            hits += 1
            if not crit.contains(float(y)):
                bad.append(float(y))
    return CtbsReport(not bad, samples * max(1, samples // 20), hits, bad[:10])


# -- Whitney partition -------------------------------------------------------

@dataclass
class WhitneyPartition:
    intervals: list[tuple[float, float]]
    labels: list[str]
    near: list[bool]

    def total_length(self) -> float:
        return float(sum(b - a for a, b in self.intervals))


def _whitney_gap(lo: float, hi: float, F: list[tuple[float, float]], k_max: int,
                 out: list, base: RealInterval):
    """Dyadic (relative to ``base``) intervals tiling ``[lo, hi)`` with ``|K| <= dist(K, F)``."""
    L = base.length

    def dist(a, b):
        return min((max(f0 - b, a - f1, 0.0) for f0, f1 in F), default=math.inf)

    def rec(a, b, depth):
        if b <= lo or a >= hi:
            return
        a2, b2 = max(a, lo), min(b, hi)
        if (b2 - a2) <= dist(a2, b2):
            out.append((a2, b2))
            return
        if depth >= k_max:
            out.append((a2, b2))
            return
        m = (a + b) / 2
        rec(a, m, depth + 1)
        rec(m, b, depth + 1)

    rec(base.lo, base.hi, 0) if L > 0 else None


def whitney_partition(J_bar: RealInterval, I_s: Sequence[tuple[float, float]],
                      c_d: float = 1.0, k_max: int = 30) -> WhitneyPartition:
    """Partition ``J_bar`` into the pieces of ``I_s``, the large-scale blocks next to
    them, and Whitney intervals for the remainder."""
    F = sorted((max(a, J_bar.lo), min(b, J_bar.hi)) for a, b in I_s)
    if not F:
        return WhitneyPartition([(J_bar.lo, J_bar.hi)], ["W"], [False])
    for (a0, b0), (a1, b1) in zip(F, F[1:]):
        if b0 > a1:
            raise ValueError("separation pieces overlap")
    pieces: list[tuple[float, float, str]] = []
    for a, b in F:
        if b > a:
            pieces.append((a, b, "Is"))
    # the gaps between consecutive pieces (and the two ends)
    bounds = [J_bar.lo] + [x for f in F for x in f] + [J_bar.hi]
    for g in range(len(F) + 1):
        lo, hi = bounds[2 * g], bounds[2 * g + 1]
        if not hi > lo:
            continue
        left_len = (F[g - 1][1] - F[g - 1][0]) if g > 0 else None
        right_len = (F[g][1] - F[g][0]) if g < len(F) else None
        mid = (lo + hi) / 2
        r_lo, r_hi = lo, hi
        if left_len is not None and left_len > 0:
            r_lo = min(lo + c_d * left_len, mid if right_len else hi)
            pieces.append((lo, r_lo, "R"))
        if right_len is not None and right_len > 0:
            r_hi = max(hi - c_d * right_len, mid if left_len else lo, r_lo)
            if hi > r_hi:
                pieces.append((r_hi, hi, "R"))
        if r_hi > r_lo:
            found: list = []
            _whitney_gap(r_lo, r_hi, F, k_max, found, J_bar)
            pieces.extend((a, b, "W") for a, b in found)
    pieces.sort()
    ivs = [(a, b) for a, b, _ in pieces]
    labels = [t for _, _, t in pieces]
    near = [any(a <= f1 and b >= f0 for f0, f1 in F) for a, b in ivs]
    return WhitneyPartition(ivs, labels, near)
