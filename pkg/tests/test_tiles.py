import itertools
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.optimize import linprog

from polycarleson.dyadic import DyadicInterval, node_points, tilde
from polycarleson.polyalg import Poly, dist_sup, lemma_c_bound
from polycarleson.tiles import (Tile, box, ceil_fn, central_poly, contains_poly, delta_equivalence_check,
                                delta_q_P, interaction_poly, leq, leq_matrix, neighbors, pair_delta,
                                read_tiles, sample_geometric_tile, tile_from_line, tile_to_line,
                                trianglelefteq, write_tiles)

I0 = DyadicInterval(0, 0)


def F(k, n):
    return DyadicInterval(k, n)


# -- oracles -----------------------------------------------------------------------

def slack_lp(P1, P2):
    """Largest t with some q satisfying lo + t <= q(x) <= hi - t on both boxes (monomial LP)."""
    d = P1.d
    rows, rhs = [], []
    for P in (P1, P2):
        lo, hi = box(P)
        for x, a, b in zip(node_points(P.time, d), lo, hi):
            v = [x ** j for j in range(d)]
            rows.append([-c for c in v] + [1.0]); rhs.append(-a)
            rows.append(v + [1.0]); rhs.append(b)
    res = linprog(np.r_[np.zeros(d), -1.0], A_ub=rows, b_ub=rhs,
                  bounds=[(None, None)] * d + [(None, 1e6)], method="highs")
    return -res.fun


def corner_range_inside(P1, P2):
    """Margin of the image of P2's box at P1's nodes inside P1's box (corners of an affine image)."""
    d = P1.d
    lo2, hi2 = box(P2)
    lo1, hi1 = box(P1)
    x1 = np.asarray(node_points(P1.time, d))
    x2 = np.asarray(node_points(P2.time, d))
    V2 = np.vander(x2, d, increasing=True)
    V1 = np.vander(x1, d, increasing=True)
    M = V1 @ np.linalg.inv(V2)
    margin = np.inf
    for corner in itertools.product(*zip(lo2, hi2)):
        v = M @ np.asarray(corner)
        margin = min(margin, np.min(v - lo1), np.min(hi1 - v))
    return margin


def random_tile(rng, d, k, spread=4.0):
    I = DyadicInterval(k, int(rng.integers(0, 1 << k)))
    q = Poly(rng.normal(size=d) * spread)
    P = Tile.containing(q, I, d)
    if rng.random() < 0.5:
        P = neighbors(P)[int(rng.integers(0, 3 ** d))]
    return P


# -- examples ----------------------------------------------------------------------

def test_contains_and_central():
    P = Tile(I0, (F(0, 2), F(0, 5)))
    assert contains_poly(P, Poly([2.6, 3.0]))
    assert not contains_poly(P, Poly([3.5]))
    assert np.allclose(central_poly(P).coeffs, [2.5, 3.0])
    assert contains_poly(P, central_poly(P))
    assert np.allclose(central_poly(Tile(I0, (F(0, 7),))).coeffs, [7.5])
    assert P.dilate(Fraction(1)) == P
    with pytest.raises(ValueError):
        contains_poly(P, Poly([0, 0, 1]))


def test_central_poly_three_nodes():
    # centers (1/2, 1/2, 3/2) at nodes (0, 1, 1/2): the 4y - 4y^2 bump lifted by 1/2
    P = Tile(I0, (F(0, 0), F(0, 0), F(0, 1)))
    assert np.allclose(central_poly(P).coeffs, [0.5, 4.0, -4.0])


def test_neighbors():
    for d in (1, 2, 3):
        P = Tile.containing(Poly([0.3] * d), DyadicInterval(2, 1), d)
        N = neighbors(P)
        assert len(set(N)) == 3 ** d and P in N
    with pytest.raises(ValueError):
        neighbors(P.dilate(Fraction(3, 2)))


def test_leq_examples():
    P1 = Tile(I0, (F(0, 0),))
    assert not leq(P1, Tile(I0, (F(0, 4),)))
    assert leq(Tile(DyadicInterval(1, 0), (F(-1, 0),)), Tile(I0, (F(0, 1),)))
    assert leq(P1, P1) and trianglelefteq(P1, P1)


def test_ceil_fn():
    assert (ceil_fn(0), ceil_fn(3), ceil_fn(-1)) == (1.0, 0.25, 0.5)


def test_pair_delta_examples():
    P = Tile.containing(Poly([1.0, -2.0]), DyadicInterval(2, 1), 2)
    f = pair_delta(P, P)
    assert f.delta == 0 and f.ceil_delta == 1
    P1, P2 = Tile(I0, (F(0, 0),)), Tile(I0, (F(0, 4),))
    assert pair_delta(P1, P2).delta == pytest.approx(3.0)
    for Q in neighbors(P):
        assert pair_delta(P, Q).delta == 0


def test_delta_q_P_examples():
    P = Tile.containing(Poly([1.0, -2.0, 3.0]), DyadicInterval(3, 5), 3)
    assert delta_q_P(central_poly(P), P) == 0
    assert delta_q_P(Poly([10.0]), Tile(I0, (F(0, 0),))) == pytest.approx(9.0)


def test_interaction_poly():
    P1, P2 = Tile(I0, (F(0, 2), F(0, 5))), Tile(I0, (F(0, 2), F(0, 3)))
    assert interaction_poly(P1, P1).is_zero()
    assert np.allclose(interaction_poly(P1, P2).coeffs, [0, 2])
    assert np.allclose((interaction_poly(P2, P1) + interaction_poly(P1, P2)).coeffs, [0])
    e = delta_equivalence_check(P1, P1)
    assert e.lhs == e.rhs == e.ratio == 1


def test_serialization(tmp_path):
    P = Tile.containing(Poly([1.5, -2.0]), DyadicInterval(3, 5), 2)
    assert tile_from_line(tile_to_line(P)) == P
    assert tile_to_line(Tile(I0, (F(0, 2), F(0, 5)))) == "2 0 0 | 0 2 0 5"
    write_tiles(tmp_path / "t.txt", [P, P.dilate(1)])
    assert read_tiles(tmp_path / "t.txt") == [P, P]
    rows = sample_geometric_tile(P, 5)
    assert len(rows) == 5 and all(lo <= c <= hi for _, c, lo, hi in rows)


# -- properties --------------------------------------------------------------------

def small_universe(d, k_max=3, polys=3, seed=0):
    rng = np.random.default_rng(seed)
    Q = [Poly(rng.normal(size=d) * 3) for _ in range(polys)]
    out = set()
    for k in range(k_max + 1):
        for n in range(1 << k):
            for q in Q:
                out.add(Tile.containing(q, DyadicInterval(k, n), d))
    base = sorted(out)[:6]
    for P in base:
        out.update(neighbors(P))
    return sorted(out)


@pytest.mark.parametrize("d", [1, 2])
def test_orders_exhaustive_small_universe(d):
    U = small_universe(d)
    tri = {(a, b) for a in U for b in U if trianglelefteq(a, b)}
    for a in U:
        assert leq(a, a) and (a, a) in tri
    for a, b in tri:
        assert leq(a, b)
    for (a, b) in tri:
        for c in U:
            if (b, c) in tri:
                assert (a, c) in tri


@pytest.mark.parametrize("d", [2, 3, 4])
def test_leq_against_lp(d):
    rng = np.random.default_rng(d)
    checked = 0
    for _ in range(400):
        k1 = int(rng.integers(0, 4))
        P2 = random_tile(rng, d, k1)
        k2 = k1 + int(rng.integers(0, 3))
        I = DyadicInterval(k2, (P2.time.index << (k2 - k1)) + int(rng.integers(0, 1 << (k2 - k1))))
        P1 = Tile.containing(central_poly(P2) + Poly(rng.normal(size=d) * 2.0 ** k2 * 0.5), I, d)
        t = slack_lp(P1, P2)
        if abs(t) < 1e-7:
            continue
        assert leq(P1, P2) == (t > 0)
        checked += 1
    assert checked > 200


@pytest.mark.parametrize("d", [2, 3])
def test_trianglelefteq_against_corners(d):
    rng = np.random.default_rng(10 + d)
    checked = 0
    for _ in range(400):
        k1 = int(rng.integers(0, 3))
        P2 = random_tile(rng, d, k1 + 3, spread=1.0)
        Ianc = P2.time.ancestor(k1 + int(rng.integers(0, 3)))
        P1 = Tile.containing(central_poly(P2), Ianc, d)
        P1 = neighbors(P1)[int(rng.integers(0, 3 ** d))]
        m = corner_range_inside(P2, P1)
        if abs(m) < 1e-9:
            continue
        assert trianglelefteq(P2, P1) == (m > 0)
        checked += 1
    assert checked > 200


def test_leq_matrix_matches_leq():
    rng = np.random.default_rng(5)
    for d in (2, 3):
        Itop = DyadicInterval(1, 0)
        Ilow = DyadicInterval(3, 1)
        qs = [Poly(rng.normal(size=d) * 4) for _ in range(6)]
        Ps = [P for q in qs for P in neighbors(Tile.containing(q, Ilow, d))][:40]
        Qs = [P for q in qs for P in neighbors(Tile.containing(q, Itop, d))][:40]
        Qs += [Q.dilate(Fraction(3, 2)) for Q in Qs[:10]]
        Qs = [Q for Q in Qs if Q.dil == 1]
        M = leq_matrix(Ps, Qs)
        assert M.shape == (len(Ps), len(Qs))
        assert all(M[i, j] == leq(P, Q) for i, P in enumerate(Ps) for j, Q in enumerate(Qs))


@settings(max_examples=200)
@given(st.integers(1, 4), st.integers(0, 6), st.lists(st.floats(-20, 20), min_size=4, max_size=4),
       st.sampled_from([Fraction(1), Fraction(3, 2), Fraction(2), Fraction(4)]), st.integers(0, 2 ** 32))
def test_dilation_monotone(d, k, c, a, seed):
    rng = np.random.default_rng(seed)
    I = DyadicInterval(k, int(rng.integers(0, 1 << k)))
    P = Tile.containing(Poly(c[:d]), I, d)
    lo, hi = box(P)
    vals = lo + (hi - lo) * rng.random(d)
    from polycarleson.polyalg import lagrange
    q = lagrange(node_points(I, d), vals)
    if contains_poly(P, q):
        assert contains_poly(P.dilate(a), q)
    Pa = P.dilate(a)
    assert np.allclose((np.add(*box(Pa))) / 2, (lo + hi) / 2)
    assert np.allclose(np.subtract(*box(Pa)[::-1]), float(a) * (hi - lo))


@pytest.mark.parametrize("d", [2, 3, 4])
def test_lemma_c_bound_random(d):
    rng = np.random.default_rng(d)
    from polycarleson.polyalg import lagrange
    bound = lemma_c_bound(d)
    for _ in range(300):
        P = random_tile(rng, d, int(rng.integers(2, 9)))
        lo, hi = box(P)
        q = lagrange(node_points(P.time, d), lo + (hi - lo) * rng.random(d))
        assert dist_sup(q, central_poly(P), tilde(P.time)) * P.time.length <= bound


def test_pair_delta_refinement_stable():
    rng = np.random.default_rng(3)
    for _ in range(200):
        P1 = random_tile(rng, 2, int(rng.integers(0, 4)))
        P2 = random_tile(rng, 2, int(rng.integers(0, 4)))
        a, b = pair_delta(P1, P2, G=257).delta, pair_delta(P1, P2, G=513).delta
        assert 0 <= a and 0 <= ceil_fn(a) <= 1
        if max(a, b) >= 0.01:
            assert abs(a - b) <= 0.01 * max(a, b)
