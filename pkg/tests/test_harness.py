import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from polycarleson import harness
from polycarleson.carleson import GridFunction
from polycarleson.dyadic import DyadicInterval
from polycarleson.harness import (RunConfig, SuiteReport, histogram, jsonable, lp_norm, maximal_delta, maximal_fn,
                                  power_norm, read_config, rngs, write_report)
from polycarleson.polyalg import Poly
from polycarleson.tiles import Tile


def test_run_config_defaults_and_validation():
    cfg = RunConfig()
    assert cfg.m == cfg.k_max + 2
    with pytest.raises(ValueError):
        RunConfig(k_max=8, m=9)
    with pytest.raises(ValueError):
        RunConfig(d=0)
    with pytest.raises(ValueError):
        RunConfig(kernel="gaussian")
    with pytest.raises(ValueError):
        RunConfig(p=1.5, r=2.0).check_norm_exponents()
    RunConfig(p=2.0, r=1.5).check_norm_exponents()
    assert cfg.trials_or(7) == 7 and RunConfig(trials=3).trials_or(7) == 3


def test_read_config(tmp_path):
    path = tmp_path / "run.cfg"
    path.write_text("d = 3\nkmax = 5   # scales\ngrid = 9\np = 2.5\nkernel = narrow\n")
    vals = read_config(path)
    assert vals == {"d": 3, "k_max": 5, "m": 9, "p": 2.5, "kernel": "narrow"}
    assert RunConfig(**vals).m == 9
    path.write_text("colour = blue\n")
    with pytest.raises(ValueError):
        read_config(path)


def test_rngs_are_reproducible_and_distinct():
    a = [g.random() for g in rngs(1, "x", 3)]
    assert a == [g.random() for g in rngs(1, "x", 3)]
    assert len(set(a)) == 3
    assert a != [g.random() for g in rngs(1, "y", 3)]


def test_power_norm_matches_svd():
    rng = np.random.default_rng(0)
    A = rng.normal(size=(30, 20)) + 1j * rng.normal(size=(30, 20))
    sig, _, ok = power_norm(lambda v: A @ v, lambda w: A.conj().T @ w, 20, rng, tol=1e-12, max_iter=2000)
    assert ok and sig == pytest.approx(np.linalg.norm(A, 2), rel=1e-6)


def test_power_norm_null_operator():
    rng = np.random.default_rng(0)
    sig, it, ok = power_norm(lambda v: 0 * v, lambda w: 0 * w, 8, rng)
    assert ok and sig == 0.0 and it == 1
    tiny = 1e-14
    sig, _, ok = power_norm(lambda v: tiny * v, lambda w: tiny * w, 8, rng)
    assert ok and sig < 1e-12


def _maximal_oracle(v):
    n = v.size
    a = np.abs(v)
    out = np.zeros(n)
    for lo in range(n):
        for hi in range(lo + 1, n + 1):
            avg = a[lo:hi].mean()
            out[lo:hi] = np.maximum(out[lo:hi], avg)
    return out


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 5), st.integers(0, 2 ** 32))
def test_maximal_fn_within_factor_two(m, seed):
    v = np.random.default_rng(seed).normal(size=1 << m)
    got = maximal_fn(GridFunction(v.astype(complex), m)).values.real
    true = _maximal_oracle(v)
    assert np.all(got <= true + 1e-12) and np.all(got >= true / 2 - 1e-12)
    assert np.all(got >= np.abs(v) - 1e-12)


def test_maximal_delta():
    m = 4
    f = GridFunction(np.arange(16, dtype=complex), m)
    I = DyadicInterval(1, 1)                       # cells 8..15
    out = maximal_delta(f, [(I, [9])], 0.125)
    assert out.values[9].real >= np.mean(np.arange(8, 16)) - 1e-12
    assert np.count_nonzero(out.values) == 1
    with pytest.raises(ValueError):
        maximal_delta(f, [(I, [9, 10])], 0.125)     # density 2/8 > δ
    with pytest.raises(ValueError):
        maximal_delta(f, [(I, [3])], 0.5)           # E outside I
    assert not np.any(maximal_delta(f, [], 0.5).values)


def test_lp_norm():
    v = np.ones(8)
    assert lp_norm(v, 2.0, 3) == pytest.approx(1.0)
    assert lp_norm(np.array([2.0, 0.0]), 1.0, 1) == pytest.approx(1.0)


def test_histogram_skips_nonfinite():
    h = histogram([1.0, 2.0, np.inf, np.nan], bins=2)
    assert sum(h["counts"]) == 2
    assert histogram([np.nan]) == {"counts": [], "edges": []}


def test_jsonable():
    P = Tile.containing(Poly([0.0, 0.0]), DyadicInterval(1, 0), 2)
    from fractions import Fraction
    obj = {1: np.int64(3), "a": (np.float64(0.5), float("nan")), "b": np.array([1, 2]),
           "c": Fraction(1, 4), "z": 1 + 2j, "t": P, "ok": np.bool_(True)}
    out = jsonable(obj)
    assert out == {"1": 3, "a": [0.5, None], "b": [1, 2], "c": 0.25, "z": [1.0, 2.0],
                   "t": out["t"], "ok": True}
    assert isinstance(out["t"], str)
    json.dumps(out)


def test_write_report_deterministic(tmp_path):
    rep = SuiteReport("demo")
    rep.check("good", True)
    rep.check("bad", False, {"x": np.float64(1.5)})
    rep.check("bad_no_witness", False)
    rep.measured["c"] = np.float64(2.0)
    cfg = RunConfig()
    p1 = write_report([rep], cfg, {"demo": 0.1}, tmp_path / "a")
    p2 = write_report([rep], cfg, {"demo": 9.9}, tmp_path / "b")
    assert p1.read_bytes() == p2.read_bytes()
    body = json.loads(p1.read_text())
    assert body["passed"] is False and "out" not in body["config"]
    assert set(body["suites"]["demo"]["witnesses"]) == {"bad"}
    assert (tmp_path / "a" / "demo.csv").read_text().startswith("key,value")
    assert json.loads((tmp_path / "b" / "runtimes.json").read_text()) == {"demo": 9.9}


def test_sparse_set_has_no_violations():
    for delta in (0.25, 0.125, 2.0 ** -4):
        m = 9
        A = harness.sparse_set(m, delta)
        assert 0 < A.size < (1 << m)
        assert A.size / (1 << m) <= delta


def test_norm_experiment_rejects_bad_exponents():
    with pytest.raises(ValueError):
        harness.run_norm_experiment(RunConfig(p=1.5, r=2.0))


def test_small_suites_pass():
    assert harness.verify_appendix(2, trials=50, seed=1).passed
    assert harness.verify_kernel(50, seed=1).passed
    assert harness.verify_partition(1, 4, 6, trials=3, seed=1).passed
    assert harness.verify_critical(2, trials=20, seed=1).passed
