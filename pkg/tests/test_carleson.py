import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import integrate

from polycarleson.carleson import (ConvolutionScale, DirectEvaluator, GridFunction, Kernel, PhaseAssignment,
                                   TileOperator, all_tiles, apply_TP, apply_TP_star, build_block,
                                   candidate_grid, compute_EP, evaluate_direct, evaluate_TQ,
                                   psi_identity_check, reconstruct_check, restrict_scales,
                                   scale_separation, star_cells, tiles_at_scale)
from polycarleson.dyadic import DyadicInterval, grid_cells
from polycarleson.polyalg import Poly
from polycarleson.tiles import Tile, central_poly

TEL, NAR = Kernel("telescoping"), Kernel("narrow")


def test_identity_examples():
    for y in (0.3, 0.5, 0.999, -0.7, 2.0 ** -8):
        assert psi_identity_check(TEL, 40, [y]) < 1e-8
    with pytest.raises(ValueError):
        psi_identity_check(NAR, 40, [0.3])
    with pytest.raises(ValueError):
        psi_identity_check(TEL, 40, [1.0])


@pytest.mark.parametrize("ker", [TEL, NAR])
def test_kernel_odd_and_supported(ker):
    y = np.random.default_rng(0).uniform(-10, 10, 1000)
    assert np.array_equal(ker.psi(-y), -ker.psi(y))
    lo, hi = ker.support
    a = np.abs(y)
    assert np.all(ker.psi(y)[(a <= lo) | (a >= hi)] == 0)
    assert integrate.quad(lambda t: float(ker.psi(np.array([t]))[0]), lo, hi)[0] > 0


def test_narrow_kernel_mass():
    # same mass on 4 < y < 5 as 1/y on one dyadic shell
    m = integrate.quad(lambda t: float(NAR.psi(np.array([t]))[0]), 4, 5, epsabs=1e-13)[0]
    assert m == pytest.approx(math.log(2), rel=1e-10)


def cell_oracle(f, Q, ker, k, m, i):
    """(1/h) ∫_{cell i} Σ_j f_j ∫_{cell j} ψ_k(x - y) e^{i(Q(x) - Q(y))} dy dx by nested quad."""
    h = 2.0 ** -m
    lo, hi = ker.support
    Qp = Poly([0.0, *Q])
    reach = hi * 2.0 ** -k

    def inner(x, part):
        tot = 0.0
        for j in np.flatnonzero(f):
            a, b = j * h, (j + 1) * h
            a, b = max(a, x - reach), min(b, x + reach)
            if b <= a:
                continue
            def g(y):
                v = f[j] * ker.psi_k(np.array([x - y]), k)[0] * np.exp(1j * (Qp(x) - Qp(y)))
                return v.real if part == 0 else v.imag
            brk = [x - s * 2.0 ** -k for s in (-hi, -lo, lo, hi) if a < x - s * 2.0 ** -k < b]
            tot += integrate.quad(g, a, b, points=brk or None, limit=200, epsabs=1e-12)[0]
        return tot

    re = integrate.quad(lambda x: inner(x, 0), i * h, (i + 1) * h, epsabs=1e-11)[0]
    im = integrate.quad(lambda x: inner(x, 1), i * h, (i + 1) * h, epsabs=1e-11)[0]
    return (re + 1j * im) / h


@pytest.mark.parametrize("Q", [(0.0,), (40.0,), (30.0, -25.0)])
def test_evaluate_TQ_matches_quadrature(Q):
    m, k = 5, 2
    rng = np.random.default_rng(1)
    f = np.zeros(1 << m, dtype=complex)
    f[10:22] = rng.normal(size=12)
    out = evaluate_TQ(GridFunction(f, m), Q, TEL, k).values
    for i in rng.choice(1 << m, size=10, replace=False):
        ref = cell_oracle(f, Q, TEL, k, m, int(i))
        assert abs(out[i] - ref) <= 1e-6 * max(1.0, abs(ref))


def test_evaluate_TQ_trivial():
    m = 8
    one = GridFunction(np.ones(1 << m, dtype=complex), m)
    out = evaluate_TQ(one, (0.0,), NAR, 5).values
    interior = np.arange(1 << m)[(np.arange(1 << m) > 40) & (np.arange(1 << m) < 215)]
    assert np.max(np.abs(out[interior])) < 1e-12
    assert not np.any(evaluate_TQ(GridFunction.zeros(m), (3.0, 1.0), TEL, 2).values)


def test_evaluate_direct_properties():
    m, k_max = 7, 4
    rng = np.random.default_rng(2)
    f = GridFunction(rng.normal(size=1 << m) + 0j, m)
    base = evaluate_direct(f, [(0.0,)], TEL, k_max).values
    hilbert = np.abs(sum(evaluate_TQ(f, (0.0,), TEL, k).values for k in range(k_max + 1)))
    assert np.allclose(base, hilbert)
    more = evaluate_direct(f, [(0.0,), (20.0,), (-35.0,)], TEL, k_max).values
    assert np.all(more >= base - 1e-15)
    with pytest.raises(ValueError):
        evaluate_direct(f, [], TEL, k_max)


def test_modulated_input_prefers_matching_phase():
    # scales 3..5 keep x - y inside [0, 1] at the midpoint
    m, N = 10, 1024.0
    x = GridFunction.zeros(m).x
    f = GridFunction(np.exp(1j * N * x), m)
    mid = 1 << (m - 1)
    near = abs(evaluate_direct(f, [(N + 32.0,)], TEL, 5, k_min=3).values[mid])
    zero = abs(evaluate_direct(f, [(0.0,)], TEL, 5, k_min=3).values[mid])
    assert near > 10 * zero


def test_direct_evaluator_and_grid():
    m, k_max = 6, 3
    c = candidate_grid(2, 3, amp=20.0)
    assert len(c) == 9 and set(c) <= set(candidate_grid(2, 5, amp=20.0))
    f = np.random.default_rng(3).normal(size=1 << m) + 0j
    ev = DirectEvaluator(c, TEL, k_max, m)
    ref = evaluate_direct(GridFunction(f, m), c, TEL, k_max).values
    assert np.allclose(ev(f), ref, atol=1e-13)
    vals, idx = ev.argmax(f)
    assert np.allclose(vals, ref) and idx.min() >= 0


@pytest.mark.parametrize("ker", [TEL, NAR])
@pytest.mark.parametrize("k", [2, 4])
def test_convolution_scale_matches_block(ker, k):
    m, freq = 9, 37.0
    C = ConvolutionScale(ker, k, m, freq)
    B = build_block(ker, k, m, np.arange(1 << m), np.tile([freq, 0.0], (1 << m, 1)))
    v = np.random.default_rng(k).normal(size=1 << m) + 0j
    assert np.allclose(C.apply(v), B.matvec(v), atol=1e-12)
    assert np.allclose(C.adjoint(v), B.rmatvec(v), atol=1e-12)


def test_compute_EP_examples():
    I = DyadicInterval(2, 1)
    P = Tile.containing(Poly([3.0, -1.0]), I, 2)
    qc = np.zeros(2)
    c = np.asarray(central_poly(P).coeffs, dtype=float)
    qc[:c.size] = c
    sigma = PhaseAssignment.constant([qc[0], qc[1] / 2], 6)
    E, dens = compute_EP(P, sigma)
    assert list(E) == list(grid_cells(I, 6)) and dens == 1.0
    far = Tile.containing(Poly([300.0, 0.0]), I, 2)
    E, dens = compute_EP(far, sigma)
    assert E.size == 0 and dens == 0.0
    with pytest.raises(ValueError):
        compute_EP(Tile.containing(Poly([0.0, 0.0]), DyadicInterval(9, 0), 2), sigma)


@settings(max_examples=20, deadline=None)
@given(st.integers(1, 3), st.integers(0, 2 ** 32))
def test_partition_exact(d, seed):
    rng = np.random.default_rng(seed)
    m = 8
    sigma = PhaseAssignment.random(m, d, rng)
    for k in range(0, 7):
        tiles = tiles_at_scale(sigma, k)
        cells = np.concatenate(list(tiles.values()))
        assert np.array_equal(np.sort(cells), np.arange(1 << m))
        for P, c in list(tiles.items())[:20]:
            assert np.array_equal(np.sort(compute_EP(P, sigma)[0]), np.sort(c))


def test_tile_operators_support_and_adjoint():
    rng = np.random.default_rng(4)
    m = 9
    sigma = PhaseAssignment.random(m, 2, rng)
    tiles = list(all_tiles(sigma, 5, 2).items())
    for t in rng.choice(len(tiles), size=30, replace=False):
        P, E = tiles[t]
        f = GridFunction(rng.normal(size=1 << m) + 1j * rng.normal(size=1 << m), m)
        g = GridFunction(rng.normal(size=1 << m) + 1j * rng.normal(size=1 << m), m)
        out = apply_TP(P, f, sigma, NAR)
        assert np.all(out.output.values[np.setdiff1d(np.arange(1 << m), E)] == 0)
        star = apply_TP_star(P, g, sigma, NAR)
        outside = np.setdiff1d(np.arange(1 << m), star_cells(P.time, m))
        assert np.all(star.output.values[outside] == 0)
        lhs = out.output.inner(g)
        rhs = f.inner(star.output)
        assert abs(lhs - rhs) < 1e-9 * f.norm() * g.norm()
        # pointwise bound by the average of |f| over E(P)
        op = TileOperator(P, sigma, NAR, E)
        h = 2.0 ** -m
        bound = NAR.sup_abs() * h * np.abs(f.values[E]).sum() / P.time.length
        assert np.max(np.abs(op.adjoint(f.values))) <= bound * (1 + 1e-9)
        theta = np.exp(0.7j)
        assert np.allclose(op.apply(theta * f.values), theta * op.apply(f.values))


def test_tile_operator_far_input_and_empty():
    m = 9
    sigma = PhaseAssignment.constant([5.0, 1.0], m)
    P = Tile.containing(Poly([5.0, 2.0]), DyadicInterval(5, 3), 2)
    f = np.zeros(1 << m, dtype=complex)
    f[400:] = 1.0
    assert not np.any(TileOperator(P, sigma, TEL).apply(f))
    empty = Tile.containing(Poly([500.0, 0.0]), DyadicInterval(5, 3), 2)
    assert not np.any(TileOperator(empty, sigma, TEL).apply(np.ones(1 << m)))


def test_reconstruction():
    m, k_max = 8, 6
    rng = np.random.default_rng(5)
    x = GridFunction.zeros(m).x
    f = GridFunction(sum(rng.normal() * np.exp(1j * n * x) for n in (0, 3, 17, 40)), m)
    for sigma in (PhaseAssignment.constant([3.0, 2.0], m), PhaseAssignment.random(m, 2, rng)):
        rep = reconstruct_check(f, sigma, TEL, k_max)
        assert rep.relative_error < 1e-6
    assert reconstruct_check(GridFunction.zeros(m), sigma, TEL, k_max).max_error == 0
    with pytest.raises(ValueError):
        reconstruct_check(f, sigma, NAR, k_max)


def test_scale_separation():
    assert scale_separation(2) == 9 and scale_separation(1) == 3
    tiles = list(all_tiles(PhaseAssignment.constant([1.0], 12), 10))
    assert restrict_scales(tiles, 0, 1) == tiles
    kept = restrict_scales(tiles, 1, 3)
    assert {P.scale for P in kept} == {1, 4, 7, 10}


def test_csv_round_trip(tmp_path):
    rng = np.random.default_rng(6)
    f = GridFunction(rng.normal(size=16) + 1j * rng.normal(size=16), 4)
    f.to_csv(tmp_path / "f.csv")
    assert np.array_equal(GridFunction.from_csv(tmp_path / "f.csv").values, f.values)
    s = PhaseAssignment.random(4, 3, rng)
    s.to_csv(tmp_path / "s.csv")
    assert np.array_equal(PhaseAssignment.from_csv(tmp_path / "s.csv").coeffs, s.coeffs)
