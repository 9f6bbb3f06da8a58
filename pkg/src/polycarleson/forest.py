"""Mass, density levels and the tree / forest / row decomposition of a tile set.

Every stage records what it did with each tile so the whole pipeline can be
audited: a tile of a level ends in exactly one bucket (an antichain layer, an
exceptional set, a discard set, a pruned chain layer, a boundary set, or a tree).
"""

from __future__ import annotations

import json
import math
from collections import defaultdict
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Callable, Iterable, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .dyadic import DyadicInterval, grid_cells
from .tiles import (Tile, basis_values, centers, half_widths, leq, leq_filter, leq_matrix, neighbors, pair_delta,
                    tile_to_line, trianglelefteq)

THREE_HALVES = Fraction(3, 2)


# -- parameters ----------------------------------------------------------------

def rho_default(p: float) -> float:
    """Largest admissible ρ: min{1, |p-1| / (2|2-p|)}, equal to 1 at p = 2."""
    if p == 2:
        return 1.0
    return min(1.0, abs(p - 1) / (2 * abs(2 - p)))


@dataclass(frozen=True)
class MassParams:
    N: int = 12
    K: float = 4.0
    M: int = 3
    p: float = 2.0
    rho: float | None = None
    eps0: float = 0.01
    c_d: float | None = None
    chain_length: float | None = None     # overrides L = log(K^{100M} δ^{-100M})
    normal_factor: float | None = None    # overrides δ^{100} K^{-2M}

    def __post_init__(self):
        if self.N < 1:
            raise ValueError("N must be at least 1")
        if self.K <= 0 or self.M <= 0:
            raise ValueError("K and M must be positive")
        r = self.rho_value
        if not 0 < r <= rho_default(self.p) + 1e-15:
            raise ValueError(f"rho must lie in (0, {rho_default(self.p)}]")

    @property
    def rho_value(self) -> float:
        return rho_default(self.p) if self.rho is None else self.rho

    def cd(self, d: int) -> float:
        return float(d) ** d if self.c_d is None else self.c_d

    def chain_L(self, delta: float) -> float:
        if self.chain_length is not None:
            return self.chain_length
        return 100 * self.M * (math.log(self.K) - math.log(delta))

    def normal(self, delta: float) -> float:
        if self.normal_factor is not None:
            return self.normal_factor
        return delta ** 100 * self.K ** (-2 * self.M)

    def row_bound(self, delta: float) -> float:
        return self.K * delta ** (-(1 + self.rho_value))

    def as_dict(self) -> dict:
        return {"N": self.N, "K": self.K, "M": self.M, "p": self.p, "rho": self.rho_value,
                "eps0": self.eps0, "c_d": self.c_d, "chain_length": self.chain_length,
                "normal_factor": self.normal_factor}


# -- the tile universe -------------------------------------------------------

class Universe:
    """Tiles with nonempty ``E(P)`` on a grid of ``2^m`` cells."""

    def __init__(self, E: dict[Tile, np.ndarray], m: int):
        self.m = m
        self.E = {P: np.asarray(c) for P, c in E.items() if len(c)}
        self.tiles = sorted(self.E)
        self.index = TimeIndex(self.tiles)
        self._above: dict[Tile, list[Tile]] = {}

    @classmethod
    def from_phase(cls, sigma, k_max: int, k_min: int = 0, D: int = 1, j: int = 0) -> "Universe":
        from .carleson import tiles_at_scale
        E = {}
        for k in range(k_min, k_max + 1):
            if k % D == j % D:
                E.update(tiles_at_scale(sigma, k))
        return cls(E, sigma.m)

    def __len__(self):
        return len(self.tiles)

    def __contains__(self, P):
        return P in self.E

    def above(self, P: Tile) -> list[Tile]:
        """Tiles of the universe strictly above ``P`` in ``≤`` (memoized)."""
        if P not in self._above:
            group = self.index.groups[P.time]
            found: dict[Tile, list[Tile]] = {Q: [] for Q in group}
            for s in self.index.scales:
                if s >= P.time.scale:
                    break
                anc = self.index.groups.get(P.time.ancestor(s), [])
                hits = leq_matrix(group, anc)
                for i, Q in enumerate(group):
                    found[Q].extend(anc[j] for j in np.flatnonzero(hits[i]))
            self._above.update(found)
        return self._above[P]

    def A0(self, P: Tile) -> float:
        c = self.E.get(P)
        if c is None:
            return 0.0
        return len(c) / (1 << (self.m - P.scale))


class TimeIndex:
    """Tiles grouped by time interval, for ancestor lookups."""

    def __init__(self, tiles: Iterable[Tile]):
        self.groups: dict[DyadicInterval, list[Tile]] = defaultdict(list)
        for P in tiles:
            self.groups[P.time].append(P)
        self.scales = sorted({I.scale for I in self.groups})

    def containing(self, I: DyadicInterval, strict: bool = False) -> Iterable[Tile]:
        """Tiles whose time interval contains ``I``, coarsest first."""
        for s in self.scales:
            if s > I.scale or (strict and s == I.scale):
                break
            yield from self.groups.get(I.ancestor(s), ())

    def contained(self, I: DyadicInterval) -> Iterable[Tile]:
        for J, ts in self.groups.items():
            if I.contains(J):
                yield from ts


# -- mass ------------------------------------------------------------------------

def _gap_lower(P1: Tile, P2: Tile, points: int = 9) -> float:
    """A lower bound for Δ(P1, P2) from a few samples (``|I1| >= |I2|``)."""
    I2 = P2.time
    y = np.linspace(I2.lo, I2.hi, points)
    B1, B2 = basis_values(P1, y), basis_values(P2, y)
    g = np.abs(B1 @ centers(P1) - B2 @ centers(P2)) - np.abs(B1) @ half_widths(P1) - np.abs(B2) @ half_widths(P2)
    return max(0.0, float(g.max())) * I2.length


def mass(P: Tile, universe: Universe, N: int = 12) -> float:
    """sup over ``P'`` with ``I ⊆ I'`` of ``A0(P') ⌈Δ(2P, 2P')⌉^N``.

    Candidates are visited by decreasing density; the search stops once the
    density alone cannot beat the current best, and a sampled lower bound on
    Δ skips candidates that cannot win.  The result equals the plain sup.
    """
    if P not in universe:
        raise ValueError("tile is not in the universe")
    cands = sorted(((universe.A0(Q), Q) for Q in universe.index.containing(P.time)),
                   key=lambda t: (-t[0], t[1]))
    best = 0.0
    P2 = P.dilate(2)
    for a, Q in cands:
        if a <= best:
            break
        if Q == P:
            best = max(best, a)
            continue
        Q2 = Q.dilate(2)
        if a * (1.0 / (1.0 + _gap_lower(Q2, P2))) ** N <= best:
            continue
        best = max(best, a * pair_delta(Q2, P2).ceil_delta ** N)
    return best


def all_masses(universe: Universe, N: int = 12) -> dict[Tile, float]:
    return {P: mass(P, universe, N) for P in universe.tiles}


def level_of(A: float) -> int | None:
    """The ``n`` with ``2^-n-1 < A <= 2^-n``; ``None`` for ``A = 0``."""
    if A <= 0:
        return None
    if A > 1:
        raise ValueError("mass exceeds 1")
    mant, e = math.frexp(A)
    return 1 - e if mant == 0.5 else -e


def mass_levels(masses: dict[Tile, float]) -> dict[int | None, list[Tile]]:
    out: dict[int | None, list[Tile]] = defaultdict(list)
    for P in sorted(masses):
        out[level_of(masses[P])].append(P)
    return dict(out)


# -- order helpers ---------------------------------------------------------------

def _strictly_above(P: Tile, pool: set, index: TimeIndex) -> list[Tile]:
    """Members ``Q`` of ``pool`` with ``P ≤ Q`` and not ``Q ≤ P``."""
    # over a common interval ≤ is symmetric, so only coarser intervals count
    cand = [Q for Q in index.containing(P.time, strict=True) if Q in pool]
    return leq_filter(P, cand)


def heights(tiles: Sequence[Tile], upward: bool = True) -> dict[Tile, int]:
    """Length of the longest strict chain above (``upward``) or below each tile."""
    pool = set(tiles)
    index = TimeIndex(tiles)
    h: dict[Tile, int] = {}
    if upward:
        for P in sorted(tiles, key=lambda t: (t.scale, t)):
            above = _strictly_above(P, pool, index)
            h[P] = 1 + max((h[Q] for Q in above), default=-1)
    else:
        below: dict[Tile, list[Tile]] = defaultdict(list)
        for P in tiles:
            for Q in _strictly_above(P, pool, index):
                below[Q].append(P)
        for P in sorted(tiles, key=lambda t: (-t.scale, t)):
            h[P] = 1 + max((h[Q] for Q in below[P]), default=-1)
    return h


def is_antichain(tiles: Sequence[Tile]) -> tuple[bool, tuple | None]:
    index = TimeIndex(tiles)
    pool = set(tiles)
    for P in tiles:
        for Q in index.containing(P.time):
            if Q != P and Q in pool and leq(P, Q):
                return False, (P, Q)
    return True, None


def intransitive_triples(universe: Universe, sample: int = 300, limit: int = 5) -> tuple[int, list]:
    """Triples ``P ≤ Q ≤ R`` with ``P ≰ R`` among an evenly spaced sample of base tiles.

    The order is not claimed to be transitive; this only reports what is seen.
    """
    tiles = universe.tiles
    step = max(1, len(tiles) // sample)
    count, found = 0, []
    for P in tiles[::step]:
        above_P = set(universe.above(P))
        for Q in universe.above(P):
            for R in universe.above(Q):
                if R not in above_P and R != P:
                    count += 1
                    if len(found) < limit:
                        found.append((P, Q, R))
    return count, found


def select_maximal(universe: Universe, n: int) -> list[Tile]:
    """Tiles with density at least ``2^-n-1`` that are ≤-maximal among such tiles."""
    thr = 2.0 ** (-n - 1)
    cand = [P for P in universe.tiles if universe.A0(P) >= thr]
    return [P for P in cand if not any(universe.A0(Q) >= thr for Q in universe.above(P))]


def maximal_in(tiles: Sequence[Tile], rel: Callable[[Tile, Tile], bool]) -> list[Tile]:
    """``P`` is maximal iff every ``P'`` with ``rel(P, P')`` also has ``rel(P', P)``."""
    index = TimeIndex(tiles)
    out = []
    for P in tiles:
        ok = True
        for Q in index.containing(P.time):
            if Q != P and rel(P, Q) and not rel(Q, P):
                ok = False
                break
        if ok:
            out.append(P)
    return out


def minimal_in(tiles: Sequence[Tile]) -> list[Tile]:
    pool = set(tiles)
    index = TimeIndex(tiles)
    below: set = set()
    for P in tiles:
        for Q in _strictly_above(P, pool, index):
            below.add(Q)
    return [P for P in tiles if P not in below]


# -- counting function and the exceptional set ------------------------------------

def hl_maximal(values: np.ndarray) -> np.ndarray:
    """Uncentered maximal function over windows of ``2^j`` cells.

    Restricting window lengths to powers of two loses at most a factor 2.
    """
    v = np.abs(np.asarray(values, dtype=float))
    n = v.size
    out = v.copy()
    cs = np.concatenate([[0.0], np.cumsum(v)])
    w = 2
    while w <= n:
        avg = (cs[w:] - cs[:-w]) / w              # avg[s] over cells [s, s + w)
        full = np.full(n + w - 1, -np.inf)
        full[w - 1:w - 1 + avg.size] = avg
        # cell x lies in the windows starting at s in [x - w + 1, x]
        out = np.maximum(out, sliding_window_view(full, w)[:n].max(axis=1))
        w *= 2
    return out


def dyadic_bmo(values: np.ndarray) -> float:
    """sup over dyadic J of the mean oscillation of ``values`` on J."""
    v = np.asarray(values, dtype=float)
    n = v.size
    best = 0.0
    w = n
    while w >= 1:
        blocks = v.reshape(-1, w)
        osc = np.mean(np.abs(blocks - blocks.mean(axis=1, keepdims=True)), axis=1)
        best = max(best, float(osc.max()))
        w //= 2
    return best


@dataclass
class CountingReport:
    counts: np.ndarray
    threshold: float
    G_cells: np.ndarray
    G_measure: float
    bmo: float
    mean: float
    john_nirenberg: float
    chebyshev: float
    maxestim_ratio: float
    tops_erased: int = 0

    def summary(self) -> dict:
        return {"threshold": self.threshold, "G_measure": self.G_measure, "bmo": self.bmo,
                "mean": self.mean, "john_nirenberg_bound": self.john_nirenberg,
                "chebyshev_bound": self.chebyshev, "maxestim_ratio": self.maxestim_ratio,
                "max_count": float(self.counts.max(initial=0)), "tops_erased": self.tops_erased}


def counting_and_Gn(tops: Sequence[Tile], n: int, params: MassParams, universe: Universe) -> CountingReport:
    """Counting function of the top intervals, the set ``{N >= 2^{(1+ρ)n} K}`` and
    the two level-set estimates (dyadic BMO, and the maximal-function majorant)."""
    m = universe.m
    N = np.zeros(1 << m)
    for P in tops:
        r = grid_cells(P.time, m)
        N[r.start:r.stop] += 1
    thr = 2.0 ** ((1 + params.rho_value) * n) * params.K
    G = np.flatnonzero(N >= thr)
    h = 1.0 / (1 << m)
    bmo = dyadic_bmo(N)
    mean = float(N.mean())
    gamma = thr
    jn = math.exp(-gamma / bmo) if bmo > 0 else 0.0
    r = params.M
    cheb = float(gamma ** (-r) * np.mean(N ** r))
    # pointwise majorant N <= C 2^{n(1+ρ')} Σ (M h_k)^{1+ρ'}; report the smallest C
    rho_p = params.rho_value / 2
    maj = np.zeros(1 << m)
    for P in tops:
        ind = np.zeros(1 << m)
        ind[universe.E[P]] = 1.0
        maj += hl_maximal(ind) ** (1 + rho_p)
    maj *= 2.0 ** (n * (1 + rho_p))
    nz = N > 0
    ratio = float(np.max(N[nz] / maj[nz])) if np.any(nz) else 0.0
    return CountingReport(N, thr, G, G.size * h, bmo, mean, jn, cheb, ratio)


def inside_cells(I: DyadicInterval, cells: np.ndarray, m: int) -> bool:
    """Whether every grid cell of ``I`` is among ``cells``."""
    r = grid_cells(I, m)
    if len(r) == 0:
        return False
    lo, hi = np.searchsorted(cells, [r.start, r.stop])
    return hi - lo == len(r)


# -- the triangle filter and antichain layers -----------------------------------

@dataclass
class FilterResult:
    P0: list[Tile]
    D_layers: list[list[Tile]]
    remainder: list[Tile]
    PG: list[Tile]
    exceptional: list[Tile]
    tops_kept: list[Tile]


def strictly_triangle(P1: Tile, P2: Tile) -> bool:
    return trianglelefteq(P1, P2) and not trianglelefteq(P2, P1)


def triangle_filter(Pn: Sequence[Tile], n: int, tops: Sequence[Tile], G_cells: np.ndarray,
                    m: int) -> FilterResult:
    """Split a level into the tiles clustered under a top (``4P ◁ P̄_k``), the
    antichain layers of the rest, and drop tiles whose interval lies in ``G_n``.

    Layers use the height of the longest strict chain above a tile inside the
    level; tiles of height ``>= n`` outside the clustered part are returned
    as ``remainder``.
    """
    top_index = TimeIndex(tops)
    P0, rest = [], []
    for P in Pn:
        P4 = P.dilate(4)
        if any(strictly_triangle(P4, T) for T in top_index.containing(P.time)):
            P0.append(P)
        else:
            rest.append(P)
    h = heights(list(Pn), upward=True) if rest else {}
    layers: dict[int, list[Tile]] = defaultdict(list)
    remainder = []
    for P in rest:
        if h[P] < n:
            layers[h[P]].append(P)
        else:
            remainder.append(P)
    G_sorted = np.sort(G_cells)
    PG = [P for P in P0 if not inside_cells(P.time, G_sorted, m)]
    exc = [P for P in P0 if inside_cells(P.time, G_sorted, m)]
    kept = [T for T in tops if not inside_cells(T.time, G_sorted, m)]
    return FilterResult(P0, [layers[j] for j in sorted(layers)], remainder, PG, exc, kept)


# -- trees and forests ---------------------------------------------------------

@dataclass
class TreeCertificate:
    top_cover: bool           # (3/2)P ≤ 10 P_0 for every member
    neighbor_closed: bool     # neighbors P' with (3/2)P' ≤ P_0 present in the ambient set are members
    convex: bool              # P1 ≤ P ≤ P2 with P1, P2 members and P ambient ⇒ P member
    witness: tuple = ()
    scope: str = "ambient"

    @property
    def passed(self) -> bool:
        return self.top_cover and self.neighbor_closed and self.convex


@dataclass
class Tree:
    top: Tile
    members: list[Tile]
    certificate: TreeCertificate | None = None
    tops: list[Tile] = field(default_factory=list)

    def __len__(self):
        return len(self.members)


def certify_tree(top: Tile, members: Sequence[Tile], ambient: Sequence[Tile],
                 scope: str = "ambient") -> TreeCertificate:
    """Check the three tree conditions, quantifying over ``ambient`` for (2) and (3)."""
    mem = set(members)
    amb = set(ambient)
    top10 = top.dilate(10)
    for P in members:
        if not leq(P.dilate(THREE_HALVES), top10):
            return TreeCertificate(False, True, True, ("top_cover", P), scope)
    for P in members:
        for Pn in neighbors(P):
            if Pn in amb and Pn not in mem and leq(Pn.dilate(THREE_HALVES), top):
                return TreeCertificate(True, False, True, ("neighbor", P, Pn), scope)
    idx = TimeIndex(members)
    for P in amb - mem:
        # some member below and some member above
        above = any(leq(P, Q) for Q in idx.containing(P.time))
        if not above:
            continue
        below = any(leq(R, P) for R in mem if P.time.contains(R.time))
        if below:
            return TreeCertificate(True, True, False, ("convexity", P), scope)
    return TreeCertificate(True, True, True, (), scope)


def B_count(P: Tile, tops_index: TimeIndex) -> int:
    P4 = P.dilate(4)
    return sum(1 for T in tops_index.containing(P.time) if trianglelefteq(P4, T))


@dataclass
class ForestBuild:
    j: int
    tops: list[Tile]
    A: list[Tile]
    trees: list[Tree]
    properties: dict
    merge_sizes: list[int]


def _connected_components(n: int, edges: Iterable[tuple[int, int]]) -> list[list[int]]:
    parent = list(range(n))

    def find(a):
        while parent[a] != a:
            parent[a] = parent[parent[a]]
            a = parent[a]
        return a

    for a, b in edges:
        ra, rb = find(a), find(b)
        if ra != rb:
            parent[max(ra, rb)] = min(ra, rb)
    groups: dict[int, list[int]] = defaultdict(list)
    for a in range(n):
        groups[find(a)].append(a)
    return [groups[r] for r in sorted(groups)]


def build_forest(PG: Sequence[Tile], tops: Sequence[Tile], params: MassParams, d: int,
                 check_properties: bool = True) -> list[ForestBuild]:
    """Group ``PG`` by the count ``B(P)`` of tops above ``4P`` and assemble each group into trees."""
    tidx = TimeIndex(tops)
    classes: dict[int, list[Tile]] = defaultdict(list)
    for P in PG:
        b = B_count(P, tidx)
        if b < 1:
            raise AssertionError(f"tile {tile_to_line(P)} has no top above its 4-dilate")
        classes[b.bit_length() - 1].append(P)
    return [_assemble(j, classes[j], params, d, check_properties) for j in sorted(classes)]


def _assemble(j: int, Pnj: list[Tile], params: MassParams, d: int, check: bool) -> ForestBuild:
    four = {P: P.dilate(4) for P in Pnj}
    idx = TimeIndex(Pnj)
    tops = []
    for P in Pnj:
        ok = True
        for Q in idx.containing(P.time):
            if Q != P and leq(four[P], four[Q]) and not leq(four[Q], four[P]):
                ok = False
                break
        if ok:
            tops.append(P)
    props = _properties(Pnj, tops, four) if check else {}
    top_idx = TimeIndex(tops)
    three = {P: P.dilate(THREE_HALVES) for P in Pnj}
    below_top = {P: [T for T in top_idx.containing(P.time) if leq(three[P], T)] for P in Pnj}
    minimal = set(minimal_in(Pnj))
    A, B = [], []
    for P in Pnj:
        if not below_top[P]:
            A.append(P)
        elif any(T.time.scale == P.scale for T in below_top[P]):
            A.append(P)
        elif P in minimal:
            A.append(P)
        else:
            B.append(P)
    # S_k and the linking relation
    top_pos = {T: i for i, T in enumerate(tops)}
    S: dict[int, list[Tile]] = defaultdict(list)
    for P in B:
        for T in below_top[P]:
            S[top_pos[T]].append(P)
    keys = sorted(S)
    pos = {k: i for i, k in enumerate(keys)}
    edges = []
    for a in keys:
        for b in keys:
            if a < b and _linked(S[a], tops[b], S[b], tops[a]):
                edges.append((pos[a], pos[b]))
    comps = _connected_components(len(keys), edges)
    trees, sizes = [], []
    assigned: set = set()
    for comp in comps:
        ks = [keys[i] for i in comp]
        members = sorted({P for k in ks for P in S[k]} - assigned)
        assigned.update(members)
        sizes.append(len(ks))
        trees.append(Tree(tops[ks[0]], members, None, [tops[k] for k in ks]))
    for t in trees:
        t.certificate = certify_tree(t.top, t.members, B, scope="B_nj")
    props["merge_bound"] = params.cd(d)
    props["merge_ok"] = all(s <= params.cd(d) for s in sizes)
    return ForestBuild(j, tops, A, trees, props, sizes)


def _linked(Sk: list[Tile], Pl: Tile, Sl: list[Tile], Pk: Tile) -> bool:
    Pl10, Pk10 = Pl.dilate(10), Pk.dilate(10)
    return (any(leq(P.dilate(2), Pl10) for P in Sk if Pl.time.contains(P.time))
            or any(leq(P.dilate(2), Pk10) for P in Sl if Pk.time.contains(P.time)))


def _properties(Pnj: list[Tile], tops: list[Tile], four: dict) -> dict:
    """Exhaustive checks of (A) equal intervals for related tops, (B) cover of the
    class by tops, (C) tops sharing a tile under ⊴ are mutually ≤."""
    a_ok = all(Tl.time == Tk.time for Tl in tops for Tk in tops
               if Tl != Tk and leq(four[Tl], four[Tk]))
    tidx = TimeIndex(tops)
    b_ok = all(any(leq(four[P], four[T]) for T in tidx.containing(P.time)) for P in Pnj)
    c_ok = True
    for P in Pnj:
        under = [T for T in tidx.containing(P.time) if trianglelefteq(four[P], four[T])]
        for T1 in under:
            for T2 in under:
                if T1 != T2 and not (leq(four[T1], four[T2]) and leq(four[T2], four[T1])):
                    c_ok = False
    return {"A": a_ok, "B": b_ok, "C": c_ok}


def separation_check(T1: Tree, T2: Tree, delta: float) -> tuple[bool, Tile | None]:
    """δ-separation: members of one tree inside the other's top interval are far from its top."""
    I1, I2 = T1.top.time, T2.top.time
    if I1.disjoint(I2):
        return True, None
    for members, I_other, top_other in ((T1.members, I2, T2.top), (T2.members, I1, T1.top)):
        for P in members:
            if I_other.contains(P.time) and not pair_delta(P, top_other).ceil_delta < delta:
                return False, P
    return True, None


def forest_separated(trees: Sequence[Tree]) -> tuple[bool, tuple | None]:
    """Condition ``2P ≰ 10 P_k`` across distinct trees."""
    for a, Ta in enumerate(trees):
        for b, Tb in enumerate(trees):
            if a == b:
                continue
            top10 = Tb.top.dilate(10)
            for P in Ta.members:
                if Tb.top.time.contains(P.time) and leq(P.dilate(2), top10):
                    return False, (a, b, P)
    return True, None


def top_overlap(trees: Sequence[Tree], m: int) -> int:
    cnt = np.zeros(1 << m, dtype=np.int64)
    for T in trees:
        r = grid_cells(T.top.time, m)
        cnt[r.start:r.stop] += 1
    return int(cnt.max(initial=0))


# -- chain pruning, normal trees and rows ------------------------------------------

@dataclass
class Row:
    trees: list[Tree]

    def tops_disjoint(self) -> bool:
        I = sorted(T.top.time for T in self.trees)
        return all(a.disjoint(b) for i, a in enumerate(I) for b in I[i + 1:])


@dataclass
class RowsResult:
    rows: list[Row]
    plus_layers: list[list[Tile]]
    minus_layers: list[list[Tile]]
    boundary: list[Tile]
    non_normal: list[Tile]
    F_cells: np.ndarray
    F_bound: float
    normal_trees: list[Tree]
    row_bound: float
    L: float


def is_normal(tree: Tree, factor: float) -> bool:
    I0 = tree.top.time
    for P in tree.members:
        if not P.time.length <= factor * I0.length:
            return False
        dist = min(P.time.lo - I0.lo, I0.hi - P.time.hi)
        if not dist > 20 * factor * I0.length:
            return False
    return True


def normalize_and_rows(trees: Sequence[Tree], params: MassParams, delta: float, m: int) -> RowsResult:
    """Prune long-chain-free tiles, split off the boundary parts, keep normal trees, pack rows."""
    L = params.chain_L(delta)
    allP = [P for T in trees for P in T.members]
    up = heights(allP, upward=True)
    down = heights(allP, upward=False)
    plus = defaultdict(list)
    minus = defaultdict(list)
    removed = set()
    for P in allP:
        # no chain P < P_1 < ... < P_L  ⇔  height above < L
        if up[P] < L:
            plus[up[P]].append(P)
            removed.add(P)
        elif down[P] < L:
            minus[down[P]].append(P)
            removed.add(P)
    factor = params.normal(delta)
    F = np.zeros(1 << m, dtype=bool)
    h = 1.0 / (1 << m)
    x0 = np.arange(1 << m) * h
    F_bound = 0.0
    for T in trees:
        I = T.top.time
        w = 100 * factor * I.length
        F_bound += 2 * w
        F |= (x0 + h > I.lo) & (x0 < I.hi) & ((x0 < I.lo + w) | (x0 + h > I.hi - w))
    boundary, non_normal, normal_trees = [], [], []
    for T in trees:
        I = T.top.time
        w = 100 * factor * I.length
        keep = []
        for P in T.members:
            if P in removed:
                continue
            if P.time.lo >= I.lo and P.time.hi <= I.hi and (P.time.hi <= I.lo + w or P.time.lo >= I.hi - w):
                boundary.append(P)
            elif P.time.length <= factor * I.length and min(P.time.lo - I.lo, I.hi - P.time.hi) > 20 * factor * I.length:
                keep.append(P)
            else:
                non_normal.append(P)
        if keep:
            normal_trees.append(Tree(T.top, keep, T.certificate, T.tops))
    rows: list[Row] = []
    for T in sorted(normal_trees, key=lambda t: (t.top.time.lo, t.top)):
        for R in rows:
            if all(T.top.time.disjoint(S.top.time) for S in R.trees):
                R.trees.append(T)
                break
        else:
            rows.append(Row([T]))
    return RowsResult(rows, [plus[k] for k in sorted(plus)], [minus[k] for k in sorted(minus)],
                      boundary, non_normal, np.flatnonzero(F), F_bound, normal_trees,
                      params.row_bound(delta), L)



# -- the full pipeline -----------------------------------------------------------

BUCKETS = ("D_layer", "remainder", "exceptional", "A_nj", "pruned_plus", "pruned_minus",
           "boundary", "non_normal", "tree")


@dataclass
class LevelResult:
    n: int
    tiles: list[Tile]
    tops: list[Tile]
    counting: CountingReport
    filter: FilterResult
    forests: list[ForestBuild]
    rows: list[RowsResult]
    buckets: dict[Tile, str]
    checks: dict


@dataclass
class PipelineResult:
    params: MassParams
    masses: dict[Tile, float]
    levels: list[LevelResult]
    sink: list[Tile]
    m: int

    @property
    def passed(self) -> bool:
        return all(all(v for v in L.checks.values() if isinstance(v, bool)) for L in self.levels)

    def first_failure(self):
        for L in self.levels:
            for k, v in L.checks.items():
                if v is False:
                    return L.n, k
        return None

    def to_dict(self) -> dict:
        levels = []
        for L in self.levels:
            forests = []
            for F, R in zip(L.forests, L.rows):
                forests.append({
                    "j": F.j, "tops": [tile_to_line(T) for T in F.tops], "A_nj": len(F.A),
                    "properties": F.properties, "merge_sizes": F.merge_sizes,
                    "trees": [{"top": tile_to_line(T.top), "size": len(T),
                               "certificate": {"top_cover": T.certificate.top_cover,
                                               "neighbor_closed": T.certificate.neighbor_closed,
                                               "convex": T.certificate.convex,
                                               "scope": T.certificate.scope}} for T in F.trees],
                    "rows": [[tile_to_line(T.top) for T in row.trees] for row in R.rows],
                    "row_bound": R.row_bound, "L": R.L,
                    "pruned": [len(x) for x in R.plus_layers] + [len(x) for x in R.minus_layers],
                    "F_measure": len(R.F_cells) / (1 << self.m), "F_bound": R.F_bound,
                })
            counts = defaultdict(int)
            for b in L.buckets.values():
                counts[b] += 1
            levels.append({"n": L.n, "tiles": len(L.tiles), "tops": len(L.tops),
                           "counting": L.counting.summary(),
                           "D_layers": [len(x) for x in L.filter.D_layers],
                           "buckets": dict(sorted(counts.items())), "forests": forests,
                           "checks": L.checks})
        return {"params": self.params.as_dict(), "tiles": len(self.masses), "sink": len(self.sink),
                "levels": levels}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, default=_jsonable)


def _jsonable(o):
    if isinstance(o, (np.integer,)):
        return int(o)
    if isinstance(o, (np.floating,)):
        return float(o)
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(type(o))


def decompose(universe: Universe, params: MassParams = MassParams(), masses=None,
              certify: bool = True) -> PipelineResult:
    """Run every stage on every mass level and collect the certificates."""
    masses = all_masses(universe, params.N) if masses is None else masses
    by_level = mass_levels(masses)
    sink = by_level.pop(None, [])
    d = universe.tiles[0].d if universe.tiles else 1
    out = []
    for n in sorted(by_level):
        Pn = by_level[n]
        delta = 2.0 ** (-n)
        tops = select_maximal(universe, n)
        cnt = counting_and_Gn(tops, n, params, universe)
        filt = triangle_filter(Pn, n, tops, cnt.G_cells, universe.m)
        cnt.tops_erased = len(tops) - len(filt.tops_kept)
        buckets: dict[Tile, str] = {}
        dup: list = []

        def put(tiles, name):
            for P in tiles:
                if P in buckets:
                    dup.append(P)
                buckets[P] = name

        for layer in filt.D_layers:
            put(layer, "D_layer")
        put(filt.remainder, "remainder")
        put(filt.exceptional, "exceptional")
        forests = build_forest(filt.PG, filt.tops_kept, params, d, certify)
        rows = []
        checks: dict = {}
        for F in forests:
            put(F.A, "A_nj")
            R = normalize_and_rows(F.trees, params, delta, universe.m)
            rows.append(R)
            for layer in R.plus_layers:
                put(layer, "pruned_plus")
            for layer in R.minus_layers:
                put(layer, "pruned_minus")
            put(R.boundary, "boundary")
            put(R.non_normal, "non_normal")
            for T in R.normal_trees:
                put(T.members, "tree")
        checks["conservation"] = not dup and set(buckets) == set(Pn)
        checks["D_antichains"] = all(is_antichain(layer)[0] for layer in filt.D_layers)
        checks["D_layer_count"] = len(filt.D_layers) <= max(n, 0)
        checks["remainder_flagged"] = len(filt.remainder)
        checks["overlap_after_G"] = int(np.max(_count(filt.tops_kept, universe.m), initial=0)) < cnt.threshold
        for F, R in zip(forests, rows):
            tag = f"j{F.j}"
            checks[f"{tag}_trees_certified"] = all(T.certificate.passed for T in F.trees)
            checks[f"{tag}_properties"] = all(v for k, v in F.properties.items() if isinstance(v, bool))
            checks[f"{tag}_mass"] = all(masses[P] <= delta for T in F.trees for P in T.members)
            checks[f"{tag}_rows_disjoint"] = all(row.tops_disjoint() for row in R.rows)
            checks[f"{tag}_row_count"] = len(R.rows) <= R.row_bound
            checks[f"{tag}_rows_normal"] = all(is_normal(T, params.normal(delta)) for row in R.rows for T in row.trees)
            checks[f"{tag}_pruned_antichains"] = all(is_antichain(x)[0] for x in R.plus_layers + R.minus_layers)
            checks[f"{tag}_F_bound"] = len(R.F_cells) / (1 << universe.m) <= R.F_bound + 2.0 / (1 << universe.m) * len(F.trees)
            if certify:
                checks[f"{tag}_separated"] = forest_separated(F.trees)[0]
        out.append(LevelResult(n, Pn, tops, cnt, filt, forests, rows, buckets, checks))
    return PipelineResult(params, masses, out, sink, universe.m)


def _count(tops: Sequence[Tile], m: int) -> np.ndarray:
    N = np.zeros(1 << m)
    for P in tops:
        r = grid_cells(P.time, m)
        N[r.start:r.stop] += 1
    return N
