from fractions import Fraction

import pytest
from hypothesis import given, strategies as st

from polycarleson.dyadic import (DyadicInterval, RealInterval, brothers, center, dilate, grid_cells,
                                 largest_dyadic_in, node_fractions, node_points, star, tilde)

scales = st.integers(-20, 40)


@st.composite
def dyadic(draw, lo=-20, hi=40):
    k = draw(st.integers(lo, hi))
    n = draw(st.integers(-(1 << 10), 1 << 10))
    return DyadicInterval(k, n)


@pytest.mark.parametrize("I, c", [(RealInterval(0, 1), 0.5), (DyadicInterval(2, 1), 0.375),
                                  (RealInterval(-1, 1), 0.0)])
def test_center(I, c):
    assert center(I) == c


def test_brothers():
    l, r = brothers(DyadicInterval(1, 0))
    assert (l.lo, l.hi, r.lo, r.hi) == (-0.5, 0.0, 0.5, 1.0)
    l, r = brothers(DyadicInterval(1, 1))
    assert (l.lo, l.hi, r.lo, r.hi) == (0.0, 0.5, 1.0, 1.5)
    l, r = brothers(DyadicInterval(0, 0))
    assert (l.index, r.index) == (-1, 1)


def test_dilate():
    J = dilate(DyadicInterval(0, 0), 13)
    assert (J.lo, J.hi) == (-6, 7)
    J = dilate(DyadicInterval(2, 1), 2)
    assert (J.lo, J.hi) == (0.125, 0.625)
    J = dilate(DyadicInterval(2, 1), 1)
    assert (J.lo, J.hi) == (0.25, 0.5)
    assert tilde(DyadicInterval(0, 0)) == dilate(DyadicInterval(0, 0), 13)
    with pytest.raises(ValueError):
        dilate(DyadicInterval(0, 0), 0)


def test_star_examples():
    left, right, _ = star(DyadicInterval(2, 0))
    assert (right.lo, right.hi) == (1.0, 1.5)
    assert (left.lo, left.hi) == (-1.25, -0.75)
    left, right, _ = star(DyadicInterval(0, 0))
    assert (right.lo, right.hi, left.lo, left.hi) == (4, 6, -5, -3)


@pytest.mark.parametrize("d, pts", [(3, (0, 1, 0.5)), (5, (0, 1, 0.5, 0.25, 0.75)),
                                    (8, (0, 1, 0.5, 0.25, 0.75, 0.125, 0.375, 0.625))])
def test_node_points(d, pts):
    assert node_points(DyadicInterval(0, 0), d) == pts


@pytest.mark.parametrize("J, out", [((0.3, 0.9), (0.5, 0.75)), ((0.0, 1.0), (0.0, 1.0)),
                                    ((0.1, 0.6), (0.25, 0.5))])
def test_largest_dyadic_in(J, out):
    I = largest_dyadic_in(RealInterval(*J))
    assert (I.lo, I.hi) == out


def test_grid_cells():
    assert grid_cells(DyadicInterval(1, 1), 3) == range(4, 8)


@given(dyadic(), dyadic())
def test_same_scale_disjoint_or_equal(I, J):
    J = DyadicInterval(I.scale, J.index)
    overlap = max(I.lo_exact, J.lo_exact) < min(I.hi_exact, J.hi_exact)
    assert overlap == (I == J)
    assert I.disjoint(J) == (I != J)


@given(dyadic(), st.integers(0, 8))
def test_containment_matches_fractions(I, extra):
    J = I.ancestor(I.scale - extra)
    assert J.contains(I)
    assert J.lo_exact <= I.lo_exact and I.hi_exact <= J.hi_exact
    assert I.length == float(Fraction(2) ** -I.scale)


@given(dyadic())
def test_star_geometry(I):
    left, right, _ = star(I)
    L = I.length
    assert right.lo - I.hi == pytest.approx(3 * L, rel=1e-12)
    assert I.lo - left.hi == pytest.approx(3 * L, rel=1e-12)
    assert left.length + right.length == pytest.approx(4 * L, rel=1e-12)


@given(dyadic(lo=-5, hi=30), st.integers(1, 8))
def test_node_point_gaps(I, d):
    pts = sorted(node_points(I, d))
    assert all(I.lo <= x <= I.hi for x in pts)
    assert len(set(pts)) == d
    if d > 1:
        assert min(b - a for a, b in zip(pts, pts[1:])) >= I.length / (2 * d)
    assert [float(x) for x in node_fractions(I, d)] == list(node_points(I, d))


@given(st.floats(0.1, 10), st.floats(0.1, 10), dyadic(lo=-5, hi=20))
def test_dilate_composes(a, b, I):
    x, y = dilate(dilate(I, a), b), dilate(I, a * b)
    assert x.lo == pytest.approx(y.lo, rel=1e-12, abs=1e-12)
    assert x.hi == pytest.approx(y.hi, rel=1e-12, abs=1e-12)
