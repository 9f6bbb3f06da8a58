import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from polycarleson import forest
from polycarleson.carleson import PhaseAssignment
from polycarleson.dyadic import DyadicInterval
from polycarleson.forest import (MassParams, Tree, Universe, all_masses, decompose, dyadic_bmo, hl_maximal,
                                 is_antichain, level_of, mass_levels, rho_default, separation_check)
from polycarleson.polyalg import Poly
from polycarleson.tiles import Tile, leq, pair_delta


@pytest.fixture(scope="module")
def universe():
    rng = np.random.default_rng(3)
    sigma = PhaseAssignment.mixture(8, 2, rng, pool=2, scale=16.0, block=4)
    return Universe.from_phase(sigma, 5)


@pytest.fixture(scope="module")
def masses(universe):
    return all_masses(universe)


def test_rho_default():
    assert rho_default(2.0) == 1.0
    assert rho_default(1.5) == pytest.approx(0.5)
    assert rho_default(3.0) == 1.0
    assert rho_default(1.2) == pytest.approx(0.2 / 1.6)


def test_mass_params_validation():
    assert MassParams().rho_value == 1.0
    with pytest.raises(ValueError):
        MassParams(N=0)
    with pytest.raises(ValueError):
        MassParams(K=0.0)
    with pytest.raises(ValueError):
        MassParams(p=1.5, rho=0.9)
    P = MassParams(chain_length=2.0, normal_factor=0.5)
    assert P.chain_L(0.25) == 2.0 and P.normal(0.25) == 0.5
    assert MassParams(K=4.0, M=1).chain_L(0.25) == pytest.approx(100 * np.log(16.0))


@pytest.mark.parametrize("A,n", [(1.0, 0), (0.5, 1), (0.75, 0), (0.3, 1), (0.25, 2), (2.0 ** -10, 10), (0.0, None)])
def test_level_of(A, n):
    assert level_of(A) == n


def test_level_of_rejects_large():
    with pytest.raises(ValueError):
        level_of(1.5)


def test_density_and_mass_bounds(universe, masses):
    assert len(universe) > 0
    for P in universe.tiles:
        assert 0 < universe.A0(P) <= 1
        assert universe.A0(P) <= masses[P] + 1e-15 <= 1 + 1e-15


def _mass_oracle(P, universe, N=12):
    # plain sup over all tiles whose time interval contains that of P
    best = 0.0
    for Q in universe.tiles:
        if Q.time.contains(P.time):
            best = max(best, universe.A0(Q) * pair_delta(Q.dilate(2), P.dilate(2)).ceil_delta ** N)
    return best


def test_mass_matches_plain_sup(universe, masses):
    rng = np.random.default_rng(0)
    for i in rng.choice(len(universe), size=min(40, len(universe)), replace=False):
        P = universe.tiles[i]
        assert masses[P] == pytest.approx(_mass_oracle(P, universe), rel=1e-12)


def test_above_is_leq(universe):
    for P in universe.tiles[:60]:
        for Q in universe.above(P):
            assert Q.time.contains(P.time) and Q.time != P.time and leq(P, Q)


def test_mass_levels_partition(masses):
    levels = mass_levels(masses)
    assert sum(len(v) for v in levels.values()) == len(masses)
    for n, tiles in levels.items():
        for P in tiles:
            assert level_of(masses[P]) == n


def test_decompose_all_checks(universe, masses):
    res = decompose(universe, MassParams(chain_length=2.0, normal_factor=2 ** -8), masses=masses)
    assert res.passed, res.first_failure()
    for L in res.levels:
        assert L.checks["conservation"]
        for layer in L.filter.D_layers:
            assert is_antichain(layer)[0]
    covered = sum(len(L.buckets) for L in res.levels) + len(res.sink)
    assert covered == len(universe)
    assert '"levels"' in res.to_json()


def test_is_antichain_detects_chain():
    q = Poly([0.0, 0.0])
    big = Tile.containing(q, DyadicInterval(0, 0), 2)
    small = Tile.containing(q, DyadicInterval(2, 1), 2)
    assert leq(small, big)
    ok, pair = is_antichain([big, small])
    assert not ok and set(pair) == {big, small}
    assert is_antichain([big])[0]


def test_separation_check_examples():
    q = Poly([0.0, 0.0])
    top1 = Tile.containing(q, DyadicInterval(0, 0), 2)
    far = Poly([1000.0, 0.0])
    top2 = Tile.containing(far, DyadicInterval(1, 0), 2)
    member = Tile.containing(far, DyadicInterval(2, 0), 2)
    T1, T2 = Tree(top1, [top1]), Tree(top2, [top2, member])
    ok, _ = separation_check(T1, T2, 0.01)
    assert ok
    # a tree whose member sits right at the other top is not separated
    T3 = Tree(top2, [top2, Tile.containing(q, DyadicInterval(2, 0), 2)])
    ok, witness = separation_check(T1, T3, 0.5)
    assert not ok and witness is not None
    # disjoint top intervals are vacuously separated
    T4 = Tree(Tile.containing(q, DyadicInterval(1, 1), 2), [])
    T5 = Tree(Tile.containing(q, DyadicInterval(1, 0), 2), [])
    assert separation_check(T4, T5, 0.5)[0]


def _hl_oracle(v):
    n = v.size
    out = np.abs(v).astype(float)
    w = 2
    while w <= n:
        for s in range(n - w + 1):
            a = np.abs(v[s:s + w]).mean()
            out[s:s + w] = np.maximum(out[s:s + w], a)
        w *= 2
    return out


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 6), st.integers(0, 2 ** 32))
def test_hl_maximal_oracle(m, seed):
    v = np.random.default_rng(seed).normal(size=1 << m)
    assert np.allclose(hl_maximal(v), _hl_oracle(v))


def test_hl_maximal_examples():
    assert np.allclose(hl_maximal(np.array([1.0, 0.0, 0.0, 0.0])), [1.0, 0.5, 0.25, 0.25])
    assert np.allclose(hl_maximal(np.ones(8)), 1.0)


def test_dyadic_bmo():
    assert dyadic_bmo(np.ones(16)) == 0.0
    assert dyadic_bmo(np.array([1.0, 0.0])) == pytest.approx(0.5)
    v = np.array([1.0, 1.0, 0.0, 0.0, 3.0, 3.0, 3.0, 3.0])
    # full interval: mean 1.75, deviations 0.75,0.75,1.75,1.75,1.25x4
    assert dyadic_bmo(v) == pytest.approx((0.75 * 2 + 1.75 * 2 + 1.25 * 4) / 8)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 6), st.integers(0, 2 ** 32), st.floats(-5, 5))
def test_dyadic_bmo_invariant_under_shift(m, seed, c):
    v = np.random.default_rng(seed).normal(size=1 << m)
    assert dyadic_bmo(v + c) == pytest.approx(dyadic_bmo(v), abs=1e-9)
    assert dyadic_bmo(v) <= 2 * np.abs(v).max() + 1e-12


def test_intransitive_triples_are_genuine():
    from polycarleson.harness import RunConfig, forest_corpus
    u = forest_corpus(RunConfig(k_max=11, m=13))
    count, found = forest.intransitive_triples(u, sample=60)
    assert count >= len(found) > 0
    for P, Q, R in found:
        assert leq(P, Q) and leq(Q, R) and not leq(P, R)
