"""Kernel, grid discretization, phase linearization and the tile operators.

Functions live on a uniform grid of ``2^m`` cells of ``[0, 1]`` and are
zero outside it.  A grid function stores cell averages.  Operators are
discretized by cell-averaged matrices

    A[i, j] = (1/h) ∫_{cell i} ∫_{cell j} e^{i(Q_i(x) - Q_i(y))} ψ_k(x - y) dy dx,

where ``Q_i`` is the phase of the output cell ``i``.  ``T_P`` keeps the
rows of ``E(P)``; ``T_P*`` is the conjugate transpose of the same block, so
the discrete adjoint identity holds to rounding.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from functools import lru_cache
from typing import Iterable, Sequence

import numpy as np
from scipy import integrate
from scipy.fft import fft, ifft, next_fast_len

from .dyadic import DyadicInterval, grid_cells, star
from .polyalg import Poly
from .tiles import Tile, box, nodes


# -- kernel ------------------------------------------------------------------

def _glue(t):
    t = np.asarray(t, dtype=float)
    out = np.zeros_like(t)
    pos = t > 0
    out[pos] = np.exp(-1.0 / t[pos])
    return out


def smooth_step(t):
    """C^∞ step: 0 for ``t <= 0``, 1 for ``t >= 1``."""
    a, b = _glue(t), _glue(1.0 - np.asarray(t, dtype=float))
    return a / (a + b)


def cutoff(y):
    """Even bump equal to 1 on ``|y| <= 4`` and 0 on ``|y| >= 8``."""
    return 1.0 - smooth_step((np.abs(y) - 4.0) / 4.0)


def _narrow_profile(t):
    t = np.asarray(t, dtype=float)
    return smooth_step((t - 4.0) / 0.5) * smooth_step((5.0 - t) / 0.5)


@lru_cache(maxsize=None)
def _narrow_scale() -> float:
    # each dyadic shell of 1/y carries mass ln 2 on the positive axis
    mass, _ = integrate.quad(lambda t: float(_narrow_profile(t)), 4.0, 5.0,
                             epsabs=1e-14, epsrel=1e-13, limit=200)
    return math.log(2.0) / mass


@dataclass(frozen=True)
class Kernel:
    """``telescoping``: ψ = (χ(y) − χ(2y))/y, supported in 2 < |y| < 8, with
    Σ_k ψ_k(y) = 1/y on 0 < |y| < 1.  ``narrow``: an odd bump supported in
    4 < |y| < 5."""
    mode: str = "telescoping"

    def __post_init__(self):
        if self.mode not in ("telescoping", "narrow"):
            raise ValueError(f"unknown kernel mode {self.mode!r}")

    @property
    def support(self) -> tuple[float, float]:
        return (2.0, 8.0) if self.mode == "telescoping" else (4.0, 5.0)

    def psi(self, y):
        y = np.asarray(y, dtype=float)
        a = np.abs(y)
        lo, hi = self.support
        inside = (a > lo) & (a < hi)
        out = np.zeros_like(y)
        ys = y[inside]
        if self.mode == "telescoping":
            out[inside] = (cutoff(ys) - cutoff(2.0 * ys)) / ys
        else:
            out[inside] = np.sign(ys) * _narrow_profile(np.abs(ys)) * _narrow_scale()
        return out

    def psi_k(self, y, k: int):
        s = math.ldexp(1.0, k)
        return s * self.psi(s * np.asarray(y, dtype=float))

    def sup_abs(self) -> float:
        lo, hi = self.support
        t = np.linspace(lo, hi, 4001)
        return float(np.max(np.abs(self.psi(t))))


def psi_identity_check(kernel: Kernel, K_max: int, samples) -> float:
    """Max over ``samples`` of |Σ_{k<=K_max} ψ_k(y) − 1/y|."""
    if kernel.mode != "telescoping":
        raise ValueError("the 1/y identity holds for the telescoping kernel only")
    y = np.asarray(samples, dtype=float)
    if np.any(y == 0) or np.any(np.abs(y) >= 1):
        raise ValueError("samples must satisfy 0 < |y| < 1")
    total = np.zeros_like(y)
    for k in range(K_max + 1):
        total += kernel.psi_k(y, k)
    return float(np.max(np.abs(total - 1.0 / y)))


# -- grid objects ----------------------------------------------------------

@dataclass
class GridFunction:
    """Cell averages of a complex function on ``2^m`` cells of [0, 1]."""
    values: np.ndarray
    m: int

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=complex)
        if self.values.shape != (1 << self.m,):
            raise ValueError(f"expected {1 << self.m} values, got {self.values.shape}")

    @property
    def h(self) -> float:
        return math.ldexp(1.0, -self.m)

    @property
    def x(self) -> np.ndarray:
        return (np.arange(1 << self.m) + 0.5) * self.h

    @classmethod
    def zeros(cls, m: int) -> "GridFunction":
        return cls(np.zeros(1 << m, dtype=complex), m)

    @classmethod
    def from_function(cls, fn, m: int, points: int = 4) -> "GridFunction":
        """Cell averages of ``fn`` by ``points``-point Gauss–Legendre per cell."""
        t, w = _gauss01(points)
        h = math.ldexp(1.0, -m)
        x = (np.arange(1 << m)[:, None] + t[None, :]) * h
        return cls(np.asarray(fn(x), dtype=complex) @ w, m)

    def norm(self, p: float = 2.0) -> float:
        a = np.abs(self.values)
        if math.isinf(p):
            return float(a.max(initial=0.0))
        return float((self.h * np.sum(a ** p)) ** (1.0 / p))

    def inner(self, other: "GridFunction") -> complex:
        return complex(self.h * np.vdot(other.values, self.values))

    def support(self, tol: float = 0.0) -> np.ndarray:
        return np.flatnonzero(np.abs(self.values) > tol)

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["x", "re", "im"])
            for x, v in zip(self.x, self.values):
                w.writerow([repr(float(x)), repr(float(v.real)), repr(float(v.imag))])

    @classmethod
    def from_csv(cls, path) -> "GridFunction":
        with open(path, newline="") as fh:
            rows = [r for r in csv.reader(fh) if r and r[0] != "x"]
        vals = np.array([float(r[1]) + 1j * float(r[2]) for r in rows])
        m = len(vals).bit_length() - 1
        if len(vals) != 1 << m:
            raise ValueError("grid size must be a power of two")
        return cls(vals, m)


@dataclass
class PhaseAssignment:
    """Piecewise constant choice ``x -> Q_x(y) = Σ_j a_j(x) y^j`` on ``2^m`` cells.

    ``coeffs[i] = (a_1, ..., a_d)`` for cell ``i``.
    """
    coeffs: np.ndarray
    m: int

    def __post_init__(self):
        self.coeffs = np.atleast_2d(np.asarray(self.coeffs, dtype=float))
        if self.coeffs.shape[0] != 1 << self.m:
            raise ValueError("one coefficient row per grid cell is required")

    @property
    def d(self) -> int:
        return self.coeffs.shape[1]

    @classmethod
    def constant(cls, a: Sequence[float], m: int) -> "PhaseAssignment":
        return cls(np.tile(np.asarray(a, dtype=float), (1 << m, 1)), m)

    @classmethod
    def random(cls, m: int, d: int, rng: np.random.Generator, scale: float = 64.0,
               block: int = 0) -> "PhaseAssignment":
        """Random phases, constant on blocks of ``2^block`` cells."""
        nb = 1 << (m - block)
        a = rng.normal(size=(nb, d)) * scale / np.arange(1, d + 1)
        return cls(np.repeat(a, 1 << block, axis=0), m)

    @classmethod
    def mixture(cls, m: int, d: int, rng: np.random.Generator, pool: int = 3,
                scale: float = 16.0, block: int = 3) -> "PhaseAssignment":
        """Each block of ``2^block`` cells draws its phase from a pool of ``pool`` polynomials.

        Regions with a single phase give long nested chains of tiles; mixed
        regions give the intermediate densities.
        """
        a = rng.normal(size=(pool, d)) * scale / np.arange(1, d + 1)
        pick = rng.integers(pool, size=1 << (m - block))
        return cls(np.repeat(a[pick], 1 << block, axis=0), m)

    def q_coeffs(self, cells=None) -> np.ndarray:
        """Monomial coefficients of ``q_x = Q_x'`` (constant term first)."""
        c = self.coeffs if cells is None else self.coeffs[cells]
        return c * np.arange(1, self.d + 1)

    def q(self, cell: int) -> Poly:
        return Poly(self.q_coeffs()[cell])

    def Q(self, cell: int) -> Poly:
        return Poly(np.concatenate([[0.0], self.coeffs[cell]]))

    def q_values(self, cells, y) -> np.ndarray:
        """``q_x(y)`` for each listed cell (rows) at points ``y`` (columns)."""
        c = self.q_coeffs(cells)
        y = np.asarray(y, dtype=float)
        out = np.zeros((c.shape[0],) + y.shape[-1:])
        for j in range(c.shape[1] - 1, -1, -1):
            out = out * y + c[:, j:j + 1]
        return out

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["cell_index"] + [f"a_{j + 1}" for j in range(self.d)])
            for i, row in enumerate(self.coeffs):
                w.writerow([i] + [repr(float(v)) for v in row])

    @classmethod
    def from_csv(cls, path) -> "PhaseAssignment":
        with open(path, newline="") as fh:
            rows = [r for r in csv.reader(fh) if r and r[0] != "cell_index"]
        rows.sort(key=lambda r: int(r[0]))
        coeffs = np.array([[float(v) for v in r[1:]] for r in rows])
        m = len(rows).bit_length() - 1
        if len(rows) != 1 << m:
            raise ValueError("grid size must be a power of two")
        return cls(coeffs, m)


# -- tiles of a phase assignment --------------------------------------------

def _check_resolution(sigma: PhaseAssignment, k: int):
    if k > sigma.m:
        raise ValueError(f"phase resolution 2^-{sigma.m} is coarser than the tile scale {k}")


def compute_EP(P: Tile, sigma: PhaseAssignment) -> tuple[np.ndarray, float]:
    """Grid cells of ``E(P) = {x in I : q_x in P}`` and the density ``|E(P)|/|I|``."""
    _check_resolution(sigma, P.scale)
    if P.d != sigma.d:
        raise ValueError("tile and phase assignment disagree on d")
    cells = np.asarray(grid_cells(P.time, sigma.m))
    if cells.size == 0:
        return cells, 0.0
    v = sigma.q_values(cells, nodes(P))
    lo, hi = box(P)
    inside = np.all((lo <= v) & (v < hi), axis=1)
    E = cells[inside]
    return E, E.size / cells.size


def tiles_at_scale(sigma: PhaseAssignment, k: int) -> dict[Tile, np.ndarray]:
    """The tiles of scale ``k`` with nonempty ``E(P)``, each with its cells.

    Every cell lands in exactly one tile, so the sets partition the grid.
    """
    _check_resolution(sigma, k)
    n_cells = 1 << sigma.m
    cells = np.arange(n_cells)
    time_idx = cells >> (sigma.m - k)
    L = math.ldexp(1.0, -k)
    unit = np.asarray(_unit_nodes(sigma.d))
    out: dict[Tile, list] = {}
    freq_idx = np.empty((n_cells, sigma.d), dtype=np.int64)
    for n in np.unique(time_idx):
        sel = cells[time_idx == n]
        y = n * L + L * unit
        v = sigma.q_values(sel, y)
        freq_idx[sel] = np.floor(np.ldexp(v, -k)).astype(np.int64)
    keys = np.concatenate([time_idx[:, None], freq_idx], axis=1)
    uniq, inv = np.unique(keys, axis=0, return_inverse=True)
    inv = inv.reshape(-1)
    order = np.argsort(inv, kind="stable")
    bounds = np.searchsorted(inv[order], np.arange(len(uniq) + 1))
    for g, key in enumerate(uniq):
        P = Tile(DyadicInterval(k, int(key[0])), tuple(DyadicInterval(-k, int(a)) for a in key[1:]))
        out[P] = order[bounds[g]:bounds[g + 1]]
    return out


@lru_cache(maxsize=None)
def _unit_nodes(d: int) -> tuple[float, ...]:
    from .dyadic import node_points
    return node_points(DyadicInterval(0, 0), d)


def all_tiles(sigma: PhaseAssignment, k_max: int, k_min: int = 0) -> dict[Tile, np.ndarray]:
    out: dict[Tile, np.ndarray] = {}
    for k in range(k_min, k_max + 1):
        out.update(tiles_at_scale(sigma, k))
    return out


def scale_separation(d: int) -> int:
    """Smallest integer larger than ``2d log2(2d)``."""
    return math.floor(2 * d * math.log2(2 * d)) + 1


def restrict_scales(tiles: Iterable[Tile], j: int, D: int) -> list[Tile]:
    if not 0 <= j < D:
        raise ValueError("need 0 <= j < D")
    return [P for P in tiles if P.scale % D == j]


# -- quadrature and banded operator blocks ------------------------------------

@lru_cache(maxsize=None)
def _gauss01(n: int) -> tuple[np.ndarray, np.ndarray]:
    t, w = np.polynomial.legendre.leggauss(n)
    return (t + 1) / 2, w / 2


@lru_cache(maxsize=None)
def _cell_rule(n: int, panels: int) -> tuple[np.ndarray, np.ndarray]:
    t, w = _gauss01(n)
    ts = ((np.arange(panels)[:, None] + t[None, :]) / panels).ravel()
    ws = np.tile(w / panels, panels)
    return ts, ws


PANEL_POINTS = 8
MAX_ROW_BYTES = 64 << 20


def panel_width(k: int, q_sup: float) -> float:
    """Panel width bound: 2^-k / (8 (1 + q_sup 2^-k))."""
    L = math.ldexp(1.0, -k)
    return L / (8.0 * (1.0 + q_sup * L))


def cell_rule(h: float, k: int, q_sup: float, points: int | None = None) -> tuple[int, int]:
    """``(points per panel, panels per cell)`` resolving the kernel and the phase."""
    pw = panel_width(k, q_sup)
    if points is not None:
        return points, 1
    if h <= pw:
        return min(PANEL_POINTS, max(2, math.ceil(PANEL_POINTS * h / pw))), 1
    return PANEL_POINTS, math.ceil(h / pw)


def _q_sup(sigma_coeffs: np.ndarray) -> float:
    """Upper bound for sup over [0,1] of |q_x| across the given rows."""
    d = sigma_coeffs.shape[1]
    return float(np.max(np.abs(sigma_coeffs) @ np.arange(1, d + 1), initial=0.0))


@dataclass
class BandBlock:
    """Rows ``rows`` of a cell-averaged scale-``k`` operator, stored as a band."""
    rows: np.ndarray
    cols: np.ndarray          # (R, C) column indices, -1 where outside the grid
    vals: np.ndarray          # (R, C) complex
    m: int
    k: int

    def matvec(self, f: np.ndarray) -> np.ndarray:
        """Full-grid output, zero off ``rows``."""
        out = np.zeros(1 << self.m, dtype=complex)
        if self.rows.size:
            fv = np.where(self.cols >= 0, f[np.maximum(self.cols, 0)], 0.0)
            out[self.rows] = np.sum(self.vals * fv, axis=1)
        return out

    def rmatvec(self, g: np.ndarray) -> np.ndarray:
        """Conjugate-transpose action."""
        out = np.zeros(1 << self.m, dtype=complex)
        if self.rows.size:
            contrib = np.conj(self.vals) * g[self.rows][:, None]
            ok = self.cols >= 0
            np.add.at(out, self.cols[ok], contrib[ok])
        return out

    def dense(self) -> np.ndarray:
        A = np.zeros((1 << self.m, 1 << self.m), dtype=complex)
        for r, i in enumerate(self.rows):
            ok = self.cols[r] >= 0
            A[i, self.cols[r][ok]] = self.vals[r][ok]
        return A


def build_block(kernel: Kernel, k: int, m: int, rows, Q_coeffs: np.ndarray,
                points: int | None = None) -> BandBlock:
    """Cell-averaged scale-``k`` block for output cells ``rows`` with phases ``Q_coeffs``.

    ``Q_coeffs[r] = (a_1, ..., a_d)`` is the phase used on row ``rows[r]``.
    """
    rows = np.asarray(rows, dtype=np.int64)
    Q_coeffs = np.atleast_2d(np.asarray(Q_coeffs, dtype=float))
    N = 1 << m
    h = math.ldexp(1.0, -m)
    if rows.size == 0:
        return BandBlock(rows, np.zeros((0, 0), np.int64), np.zeros((0, 0), complex), m, k)
    rule = cell_rule(h, k, _q_sup(Q_coeffs), points)
    t, _ = _cell_rule(*rule)
    n = t.size
    offs, Kf = _kernel_band(kernel, k, m, rule)
    C = offs.size
    if C == 0:
        return BandBlock(rows, np.zeros((rows.size, 0), np.int64), np.zeros((rows.size, 0), complex), m, k)
    cols = rows[:, None] + offs[None, :]
    valid = (cols >= 0) & (cols < N)
    cols = np.where(valid, cols, -1)
    vals = np.zeros((rows.size, C), dtype=complex)
    chunk = max(1, MAX_ROW_BYTES // (16 * max(1, C * n)))
    for s0 in range(0, rows.size, chunk):
        r = slice(s0, s0 + chunk)
        a = Q_coeffs[r]
        x = (rows[r, None] + t[None, :]) * h                        # (R, n)
        y = (cols[r, :, None] + t[None, None, :]) * h                # (R, C, n)
        U = np.exp(1j * _Q_eval(a, x))                               # (R, n)
        V = np.exp(-1j * _Q_eval(a, y.reshape(y.shape[0], -1)))      # (R, C n)
        vals[r] = ((U @ Kf) * V).reshape(-1, C, n).sum(axis=2)
    vals[~valid] = 0.0
    return BandBlock(rows, cols, vals, m, k)


@lru_cache(maxsize=16)
def _kernel_band(kernel: Kernel, k: int, m: int, rule: tuple[int, int]):
    """Offsets ``j - i`` with a nonzero kernel block and the weighted kernel
    values ``ψ_k(h (t_a - o - t_b)) w_a w_b h`` laid out as ``(n, C n)``."""
    t, w = _cell_rule(*rule)
    n = t.size
    N = 1 << m
    h = math.ldexp(1.0, -m)
    lo, hi = kernel.support
    s = math.ldexp(1.0, -k)
    o_max = math.ceil(hi * s / h) + 1
    o_min = max(0, math.floor(lo * s / h) - 1)
    offs = np.arange(o_min, o_max + 1)
    offs = np.concatenate([-offs[::-1], offs]) if o_min > 0 else np.arange(-o_max, o_max + 1)
    offs = offs[np.abs(offs) < N]
    diff = h * (t[:, None, None] - offs[None, :, None] - t[None, None, :])
    K = kernel.psi_k(diff, k) * (w[:, None, None] * w[None, None, :]) * h
    keep = np.any(K != 0, axis=(0, 2))
    offs, K = offs[keep], K[:, keep, :]
    K.setflags(write=False)
    return offs, K.reshape(n, offs.size * n)


def _Q_eval(a: np.ndarray, x: np.ndarray) -> np.ndarray:
    """``Q(x) = Σ_j a_j x^j`` per row of ``a`` (no constant term)."""
    out = np.zeros_like(x)
    for j in range(a.shape[1] - 1, -1, -1):
        out = (out + a[:, j:j + 1]) * x
    return out


# -- operators ---------------------------------------------------------------

def evaluate_TQ(f: GridFunction, Q: Sequence[float], kernel: Kernel, k: int,
                points: int | None = None) -> GridFunction:
    """Scale-``k`` piece of the modulated singular integral with one fixed phase
    ``Q(y) = Σ_j Q[j-1] y^j``."""
    N = 1 << f.m
    a = np.tile(np.asarray(Q, dtype=float), (N, 1))
    B = build_block(kernel, k, f.m, np.arange(N), a, points)
    return GridFunction(B.matvec(f.values), f.m)


def evaluate_direct(f: GridFunction, candidates: Sequence[Sequence[float]], kernel: Kernel,
                    k_max: int, k_min: int = 0) -> GridFunction:
    """Pointwise max over the candidate phases of |Σ_{k_min<=k<=k_max} T_{Q,k} f|."""
    if not candidates:
        raise ValueError("empty candidate set")
    best = np.zeros(1 << f.m)
    for Q in candidates:
        acc = np.zeros(1 << f.m, dtype=complex)
        for k in range(k_min, k_max + 1):
            acc += evaluate_TQ(f, Q, kernel, k).values
        best = np.maximum(best, np.abs(acc))
    return GridFunction(best, f.m)


def candidate_grid(d: int, n: int, amp: float = 64.0) -> list[tuple[float, ...]]:
    """``n`` values per coefficient in ``[-amp, amp]``; the grid for ``2n - 1`` contains this one."""
    axis = np.linspace(-amp, amp, n) if n > 1 else np.zeros(1)
    mesh = np.meshgrid(*([axis] * d), indexing="ij")
    return [tuple(float(v) for v in row) for row in np.stack([g.ravel() for g in mesh], axis=1)]


class DirectEvaluator:
    """``evaluate_direct`` with the summed operator of each candidate precomputed as a dense matrix."""

    def __init__(self, candidates, kernel: Kernel, k_max: int, m: int, k_min: int = 0):
        if not candidates:
            raise ValueError("empty candidate set")
        N = 1 << m
        self.m = m
        self.mats = np.zeros((len(candidates), N, N), dtype=complex)
        rows = np.arange(N)
        for i, Q in enumerate(candidates):
            a = np.tile(np.asarray(Q, dtype=float), (N, 1))
            for k in range(k_min, k_max + 1):
                self.mats[i] += build_block(kernel, k, m, rows, a).dense()

    def __call__(self, f: np.ndarray) -> np.ndarray:
        return np.abs(self.mats @ np.asarray(f, dtype=complex)).max(axis=0)

    def argmax(self, f: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Values and the maximizing candidate index per cell."""
        vals = np.abs(self.mats @ np.asarray(f, dtype=complex))
        idx = vals.argmax(axis=0)
        return vals[idx, np.arange(vals.shape[1])], idx


def linearized_operator(f: GridFunction, sigma: PhaseAssignment, kernel: Kernel,
                        k_max: int, k_min: int = 0) -> GridFunction:
    """Σ_{k<=k_max} T_k f with each output cell using its own phase."""
    N = 1 << f.m
    acc = np.zeros(N, dtype=complex)
    for k in range(k_min, k_max + 1):
        acc += build_block(kernel, k, f.m, np.arange(N), sigma.coeffs).matvec(f.values)
    return GridFunction(acc, f.m)


@dataclass
class TileOperatorResult:
    output: GridFunction
    tile: Tile
    cells: np.ndarray
    density: float


class TileOperator:
    """``T_P`` and ``T_P*`` for one tile on a fixed grid and phase assignment."""

    def __init__(self, P: Tile, sigma: PhaseAssignment, kernel: Kernel, cells=None,
                 points: int | None = None):
        self.tile = P
        self.m = sigma.m
        if cells is None:
            cells, self.density = compute_EP(P, sigma)
        else:
            self.density = len(cells) / len(grid_cells(P.time, sigma.m))
        self.cells = np.asarray(cells, dtype=np.int64)
        self.block = build_block(kernel, P.scale, sigma.m, self.cells, sigma.coeffs[self.cells], points)

    def apply(self, f: np.ndarray) -> np.ndarray:
        return self.block.matvec(f)

    def adjoint(self, g: np.ndarray) -> np.ndarray:
        return self.block.rmatvec(g)


def apply_TP(P: Tile, f: GridFunction, sigma: PhaseAssignment, kernel: Kernel) -> TileOperatorResult:
    op = TileOperator(P, sigma, kernel)
    return TileOperatorResult(GridFunction(op.apply(f.values), f.m), P, op.cells, op.density)


def apply_TP_star(P: Tile, f: GridFunction, sigma: PhaseAssignment, kernel: Kernel) -> TileOperatorResult:
    op = TileOperator(P, sigma, kernel)
    return TileOperatorResult(GridFunction(op.adjoint(f.values), f.m), P, op.cells, op.density)


def star_cells(I: DyadicInterval, m: int) -> np.ndarray:
    """Grid cells meeting the closure of ``I*``."""
    left, right, _ = star(I)
    h = math.ldexp(1.0, -m)
    x0 = np.arange(1 << m) * h
    x1 = x0 + h
    meet = ((x1 >= left.lo) & (x0 <= left.hi)) | ((x1 >= right.lo) & (x0 <= right.hi))
    return np.flatnonzero(meet)


@dataclass
class ReconstructionReport:
    max_error: float
    relative_error: float
    tiles: int


def reconstruct_check(f: GridFunction, sigma: PhaseAssignment, kernel: Kernel, k_max: int,
                      k_min: int = 0) -> ReconstructionReport:
    """Compare Σ_P T_P f over all tiles of scales ``k_min..k_max`` with the
    linearized operator truncated to the same scales."""
    if kernel.mode != "telescoping":
        raise ValueError("reconstruction uses the telescoping kernel")
    ref = linearized_operator(f, sigma, kernel, k_max, k_min).values
    acc = np.zeros_like(ref)
    count = 0
    for k in range(k_min, k_max + 1):
        for P, cells in tiles_at_scale(sigma, k).items():
            acc += TileOperator(P, sigma, kernel, cells).apply(f.values)
            count += 1
    err = float(np.max(np.abs(acc - ref), initial=0.0))
    scale = float(np.max(np.abs(ref), initial=0.0))
    return ReconstructionReport(err, err / scale if scale > 0 else err, count)


# -- constant-frequency operators ---------------------------------------------

@lru_cache(maxsize=64)
def convolution_band(kernel: Kernel, k: int, m: int, freq: float,
                     points: int | None = None) -> tuple[int, np.ndarray]:
    """Band of the cell-averaged scale-``k`` block with phase ``Q(y) = freq * y``.

    The phase difference ``Q(x) - Q(y)`` depends on ``x - y`` only, so the
    block is Toeplitz: row ``i`` holds ``band[o + O]`` at column ``i + o``
    for ``|o| <= O``.  Returns ``(O, band)``.
    """
    h = math.ldexp(1.0, -m)
    rule = cell_rule(h, k, abs(freq), points)
    offs, K = _kernel_band(kernel, k, m, rule)
    if offs.size == 0:
        return 0, np.zeros(1, dtype=complex)
    t, _ = _cell_rule(*rule)
    n = t.size
    diff = h * (t[:, None, None] - offs[None, :, None] - t[None, None, :])
    vals = (K.reshape(n, offs.size, n) * np.exp(1j * freq * diff)).sum(axis=(0, 2))
    O = int(np.abs(offs).max())
    band = np.zeros(2 * O + 1, dtype=complex)
    band[offs + O] = vals
    band.setflags(write=False)
    return O, band


class ConvolutionScale:
    """Scale-``k`` operator with the single phase ``freq * y`` on all cells, applied by FFT."""

    def __init__(self, kernel: Kernel, k: int, m: int, freq: float, points: int | None = None):
        self.m, self.k, self.freq = m, k, freq
        self.O, self.band = convolution_band(kernel, k, m, float(freq), points)
        N = 1 << m
        self.size = next_fast_len(N + self.band.size - 1)
        self._fwd = fft(self.band[::-1], self.size)
        self._bwd = fft(np.conj(self.band), self.size)

    def _conv(self, v: np.ndarray, spectrum: np.ndarray) -> np.ndarray:
        N = 1 << self.m
        return ifft(fft(np.asarray(v, dtype=complex), self.size) * spectrum)[self.O:self.O + N]

    def apply(self, f: np.ndarray) -> np.ndarray:
        return self._conv(f, self._fwd)

    def adjoint(self, g: np.ndarray) -> np.ndarray:
        return self._conv(g, self._bwd)
