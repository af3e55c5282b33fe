"""Transformation kernel on the triangle ``0 <= t <= x <= 1``.

Fields live on the uniform grid ``(x_i, t_j) = (i/M, j/M)``, stored as full
``(M+1, M+1)`` arrays with zeros above the diagonal.  The Volterra operator

    (T_sigma f)(x, t) = int_t^x sigma(s) f(s, s - t) ds

only couples values along the diagonals ``x - t = const``, which pass
through grid nodes, so no 2-D interpolation is needed.  Integrals along a
line use product integration: exact moments of the weight on each cell
against a piecewise cubic Lagrange interpolant of the grid data.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Iterator

import numpy as np

from .errors import GridMismatchError, NumericalError
from .numerics import _gauss, filon_moments, poly_cell_moments, stencil_weights
from .potential import Potential, PotentialPair, derive_constants

TERM_BUDGET = 1024


@dataclass(frozen=True)
class TriangleGrid:
    M: int

    def __post_init__(self) -> None:
        if self.M < 8:
            raise ValueError("triangle grid needs M >= 8")

    @property
    def h(self) -> float:
        return 1.0 / self.M

    @property
    def x(self) -> np.ndarray:
        return np.arange(self.M + 1) / self.M

    @property
    def mask(self) -> np.ndarray:
        """``True`` on nodes with ``j <= i``."""
        i = np.arange(self.M + 1)
        return i[None, :] <= i[:, None]

    def check(self, other: "TriangleGrid") -> None:
        if other.M != self.M:
            raise GridMismatchError(f"grid sizes differ: {self.M} vs {other.M}")


@dataclass(frozen=True)
class ScalarField:
    grid: TriangleGrid
    values: np.ndarray

    def __post_init__(self) -> None:
        n = self.grid.M + 1
        if self.values.shape != (n, n):
            raise GridMismatchError(f"field shape {self.values.shape} does not match grid M={self.grid.M}")
        if not np.all(np.isfinite(self.values)):
            raise NumericalError("non-finite values in field")

    @classmethod
    def zeros(cls, grid: TriangleGrid) -> "ScalarField":
        return cls(grid, np.zeros((grid.M + 1, grid.M + 1), dtype=complex))

    @classmethod
    def from_function(cls, grid: TriangleGrid, fn) -> "ScalarField":
        X, T = np.meshgrid(grid.x, grid.x, indexing="ij")
        vals = np.where(grid.mask, np.asarray(fn(X, T), dtype=complex), 0.0)
        return cls(grid, vals)

    def __add__(self, other: "ScalarField") -> "ScalarField":
        self.grid.check(other.grid)
        return ScalarField(self.grid, self.values + other.values)

    def __sub__(self, other: "ScalarField") -> "ScalarField":
        self.grid.check(other.grid)
        return ScalarField(self.grid, self.values - other.values)

    def __neg__(self) -> "ScalarField":
        return ScalarField(self.grid, -self.values)

    def scaled(self, alpha: complex) -> "ScalarField":
        return ScalarField(self.grid, alpha * self.values)

    def b_norm(self, r: float) -> float:
        return b_norm(self, r)


@dataclass(frozen=True)
class KernelField:
    e11: ScalarField
    e12: ScalarField
    e21: ScalarField
    e22: ScalarField

    def __post_init__(self) -> None:
        g = self.e11.grid
        for e in (self.e12, self.e21, self.e22):
            g.check(e.grid)

    @property
    def grid(self) -> TriangleGrid:
        return self.e11.grid

    def entries(self) -> Iterator[ScalarField]:
        yield from (self.e11, self.e12, self.e21, self.e22)

    @classmethod
    def zeros(cls, grid: TriangleGrid) -> "KernelField":
        z = ScalarField.zeros(grid)
        return cls(z, z, z, z)

    def __add__(self, other: "KernelField") -> "KernelField":
        return KernelField(*(a + b for a, b in zip(self.entries(), other.entries())))

    def __sub__(self, other: "KernelField") -> "KernelField":
        return KernelField(*(a - b for a, b in zip(self.entries(), other.entries())))

    def b_norm(self, r: float) -> float:
        """Largest B-norm among the four entries."""
        return max(b_norm(e, r) for e in self.entries())

    def max_abs(self) -> float:
        return max(float(np.max(np.abs(e.values))) for e in self.entries())


# -- B-space norm ----------------------------------------------------------------

def _trapezoid_rows(M: int) -> np.ndarray:
    """``W[i, j]``: trapezoid weights (in units of h) of row ``i`` on ``[0, x_i]``."""
    i = np.arange(M + 1)
    W = (i[None, :] <= i[:, None]).astype(float)
    W[i, i] = 0.5
    W[:, 0] = np.where(i > 0, 0.5, 0.0)
    W[0, 0] = 0.0
    return W


def b_norm(f: ScalarField, r: float) -> float:
    """Discrete ``sup_x ||f(x, .)||_{L_r(0, x)}`` with trapezoid weights."""
    if r < 1:
        raise ValueError("B-norm exponent must be >= 1")
    W = _trapezoid_rows(f.grid.M)
    rows = f.grid.h * np.sum(W * np.abs(f.values) ** r, axis=1)
    return float(np.max(rows) ** (1.0 / r))


# -- line product integration ------------------------------------------------------

class _LinePlan:
    """Product-integration weights for lines of grid data.

    Line ``r`` starts at cell ``start[r]`` (or cell 0 for every line when
    ``start`` is None); ``apply(G)`` returns ``P[r, L]``, the integral over
    the first ``L`` cells of the line, for every ``L``.  Lines of one or
    two cells use linear and quadratic interpolation; longer lines use
    one-sided cubic stencils at the ends and centred ones inside.
    """

    def __init__(self, cell_moments: np.ndarray, start: np.ndarray | None):
        M = cell_moments.shape[0]
        self.M = M
        W = stencil_weights(cell_moments)
        if start is None:
            cells = np.arange(M)[None, :]
            valid = np.ones((1, M), bool)
        else:
            cells = start[:, None] + np.arange(M)[None, :]
            valid = cells < M
            cells = np.where(valid, cells, 0)

        def per_cell(name):
            return np.where(valid[..., None], W[name][cells], 0.0)

        self.w_int = per_cell("int")
        self.w_right = per_cell("right")
        self.w_left0 = per_cell("left")[:, 0]
        self.w_lin0 = per_cell("lin")[:, 0]
        self.w_ql0 = per_cell("quad_left")[:, 0]
        self.w_qr1 = per_cell("quad_right")[:, 1] if M > 1 else None

    def apply(self, G: np.ndarray) -> np.ndarray:
        M = self.M
        R = G.shape[0]
        Gp = np.zeros((R, M + 5), dtype=complex)
        Gp[:, 2 : M + 3] = G
        interior = sum(self.w_int[..., q] * Gp[:, 1 + q : 1 + q + M] for q in range(4))
        right = sum(self.w_right[..., q] * Gp[:, q : q + M] for q in range(4))
        cum = np.cumsum(interior, axis=1) - interior[:, :1]  # sum over cells 1..k
        P = np.zeros((R, M + 1), dtype=complex)
        P[:, 1] = np.sum(self.w_lin0 * G[:, :2], axis=1)
        if M >= 2:
            P[:, 2] = np.sum(self.w_ql0 * G[:, :3], axis=1) + np.sum(self.w_qr1 * G[:, :3], axis=1)
        if M >= 3:
            left0 = np.sum(self.w_left0 * G[:, :4], axis=1)
            L = np.arange(3, M + 1)
            P[:, 3:] = left0[:, None] + cum[:, L - 2] + right[:, L - 1]
        return P


@dataclass
class VolterraOperator:
    """``T_sigma`` on a fixed grid, with its product-integration weights cached."""

    sigma: Potential
    grid: TriangleGrid
    _plan: _LinePlan = field(init=False, repr=False)

    def __post_init__(self) -> None:
        M = self.grid.M
        self._plan = _LinePlan(poly_cell_moments(self.sigma, M), np.arange(M + 1))
        J, K = np.meshgrid(np.arange(M + 1), np.arange(M + 1), indexing="ij")
        X = J + K
        self._valid = X <= M
        self._src = (np.where(self._valid, X, 0), K)
        I, Jt = np.meshgrid(np.arange(M + 1), np.arange(M + 1), indexing="ij")
        Lm = I - Jt
        self._lower = Lm >= 0
        self._dst = (np.where(self._lower, Jt, 0), np.where(self._lower, Lm, 0))
        self._zero = self.sigma.is_zero()

    def __call__(self, f: ScalarField) -> ScalarField:
        self.grid.check(f.grid)
        if self._zero:
            return ScalarField.zeros(self.grid)
        if not f.values.any():
            return f
        # line j carries f(x_{j+k}, t_k), k = 0..M-j
        G = np.where(self._valid, f.values[self._src], 0.0)
        P = self._plan.apply(G)
        out = np.where(self._lower, P[self._dst], 0.0)
        return ScalarField(self.grid, out)


def apply_T(sigma: Potential, f: ScalarField) -> ScalarField:
    """``(T_sigma f)(x, t) = int_t^x sigma(s) f(s, s - t) ds`` on the grid of ``f``."""
    return VolterraOperator(sigma, f.grid)(f)


# -- oscillatory row transforms ----------------------------------------------------

def row_transform(f: ScalarField, omega: complex) -> np.ndarray:
    """``int_0^{x_i} exp(i w t) f(x_i, t) dt`` for every row ``i`` (cubic Filon)."""
    M = f.grid.M
    plan = _LinePlan(filon_moments(omega, M), None)
    P = plan.apply(f.values)
    return P[np.arange(M + 1), np.arange(M + 1)]


# -- sigma tilde -----------------------------------------------------------------

def _correlation_prefix(outer: Potential, inner: Potential, t: float, upper: np.ndarray) -> np.ndarray:
    """``int_0^u outer(t + xi) inner(xi) dxi`` for each ``u`` in ``upper`` (sorted, <= 1 - t)."""
    top = 1.0 - t
    cuts = np.concatenate([inner.breaks, outer.breaks - t, upper, [0.0, top]])
    pts = np.unique(cuts[(cuts >= 0.0) & (cuts <= top)])
    if pts.size < 2:
        return np.zeros(upper.shape, dtype=complex)
    xg, wg = _gauss(4)  # degree 7 exact; the product is degree <= 6
    h = np.diff(pts)
    nodes = pts[:-1, None] + h[:, None] * xg
    vals = outer(np.minimum(t + nodes, 1.0)) * inner(nodes)
    piece = np.sum(vals * wg, axis=1) * h
    cum = np.concatenate([[0.0], np.cumsum(piece)])
    idx = np.searchsorted(pts, upper)
    idx = np.minimum(idx, pts.size - 1)
    return cum[idx]


def sigma_tilde_at(pair: PotentialPair, which: int, x, t) -> np.ndarray:
    """Pointwise ``sigma~_which(x, t)`` (zero for ``t > x``)."""
    outer, inner = _tilde_roles(pair, which)
    x = np.atleast_1d(np.asarray(x, float))
    t = np.broadcast_to(np.asarray(t, float), x.shape)
    out = np.zeros(x.shape, dtype=complex)
    for k in range(x.size):
        if t.flat[k] <= x.flat[k]:
            out.flat[k] = _correlation_prefix(outer, inner, t.flat[k], np.array([x.flat[k] - t.flat[k]]))[0]
    return out


def _tilde_roles(pair: PotentialPair, which: int) -> tuple[Potential, Potential]:
    if which == 1:
        return pair.sigma1, pair.sigma2
    if which == 2:
        return pair.sigma2, pair.sigma1
    raise ValueError("which must be 1 or 2")


def sigma_tilde(pair: PotentialPair, which: int, grid: TriangleGrid) -> ScalarField:
    """``sigma~_1(x, t) = int_0^{x-t} sigma1(t + xi) sigma2(xi) dxi`` (roles swapped for 2).

    Exact up to rounding: Gauss rules on the pieces between all breakpoints.
    """
    outer, inner = _tilde_roles(pair, which)
    M = grid.M
    vals = np.zeros((M + 1, M + 1), dtype=complex)
    if outer.is_zero() or inner.is_zero():
        return ScalarField(grid, vals)
    for j in range(M):
        L = np.arange(M - j + 1)
        col = _correlation_prefix(outer, inner, j / M, L / M)
        vals[j + L, j] = col
    return ScalarField(grid, vals)


def build_J_tilde(pair: PotentialPair, grid: TriangleGrid) -> KernelField:
    z = ScalarField.zeros(grid)
    return KernelField(sigma_tilde(pair, 1, grid), z, z, sigma_tilde(pair, 2, grid))


# -- Neumann series --------------------------------------------------------------

@dataclass
class TTilde:
    """``F -> -[[0, T_sigma1], [T_sigma2, 0]] F`` with cached operators."""

    pair: PotentialPair
    grid: TriangleGrid

    def __post_init__(self) -> None:
        self.t1 = VolterraOperator(self.pair.sigma1, self.grid)
        self.t2 = VolterraOperator(self.pair.sigma2, self.grid)

    def __call__(self, F: KernelField) -> KernelField:
        return KernelField(-self.t1(F.e21), -self.t1(F.e22), -self.t2(F.e11), -self.t2(F.e12))


@dataclass(frozen=True)
class NeumannReport:
    n_terms: int
    tail_bound: float
    last_term_norm: float
    term_norms: tuple[float, ...]
    j_tilde_norm: float
    a_priori_bound: float
    r: float


@dataclass(frozen=True)
class KernelBundle:
    """Output of :func:`neumann_solve`: the kernel plus the leading Neumann terms."""

    Q: KernelField
    report: NeumannReport
    terms: tuple[KernelField, ...]

    @property
    def J_tilde(self) -> KernelField:
        return self.terms[0]


def _tail_bound(n: int, a: float, prefactor: float) -> float:
    m = math.ceil((n - 1) / 2)
    m = max(m, 0)
    if prefactor == 0.0:
        return 0.0
    if a == 0.0:
        return prefactor if m == 0 else 0.0
    return math.exp(math.log(prefactor) + m * math.log(a) - math.lgamma(m + 1))


def neumann_solve(
    pair: PotentialPair, grid: TriangleGrid, tail_tol: float = 1e-13, keep: int = 8
) -> tuple[KernelField, NeumannReport]:
    bundle = neumann_bundle(pair, grid, tail_tol, keep)
    return bundle.Q, bundle.report


def neumann_bundle(
    pair: PotentialPair, grid: TriangleGrid, tail_tol: float = 1e-13, keep: int = 8
) -> KernelBundle:
    """``Q = sum_{n=0}^{N} T~^n J~`` with ``N`` from the a priori factorial tail bound.

    The first ``keep`` terms ``T~^n J~`` are returned alongside ``Q``.
    """
    pair = derive_constants(pair)
    c = pair.c
    r = pair.r
    Jt = build_J_tilde(pair, grid)
    jn = Jt.b_norm(r)
    prefactor = (1.0 + c.a0) * math.exp(c.a) * jn
    n = 0
    while _tail_bound(n, c.a, prefactor) >= tail_tol:
        n += 1
        if n > TERM_BUDGET:
            raise NumericalError(
                f"Neumann tail bound cannot reach {tail_tol:g} within {TERM_BUDGET} terms (a={c.a:.3g})"
            )
    T = TTilde(pair, grid)
    Q = Jt
    term = Jt
    norms = [jn]
    kept = [Jt]
    for _ in range(n):
        term = T(term)
        Q = Q + term
        norms.append(term.b_norm(r))
        if len(kept) < keep:
            kept.append(term)
    while len(kept) < keep:
        kept.append(T(kept[-1]))
    report = NeumannReport(
        n_terms=n,
        tail_bound=_tail_bound(n, c.a, prefactor),
        last_term_norm=norms[-1],
        term_norms=tuple(norms),
        j_tilde_norm=jn,
        a_priori_bound=prefactor,
        r=r,
    )
    return KernelBundle(Q, report, tuple(kept))


def fixed_point_residual(pair: PotentialPair, Q: KernelField, r: float | None = None) -> float:
    """``||Q - J~ - T~ Q||_B``."""
    grid = Q.grid
    r = pair.r if r is None else r
    res = Q - build_J_tilde(pair, grid) - TTilde(pair, grid)(Q)
    return res.b_norm(r)


def build_N(pair: PotentialPair, grid: TriangleGrid) -> KernelField:
    """``N = J~ + T~ J~``, i.e. ``[[s~1, -T_s1 s~2], [-T_s2 s~1, s~2]]``."""
    Jt = build_J_tilde(pair, grid)
    return Jt + TTilde(pair, grid)(Jt)


# -- export --------------------------------------------------------------------

def dump_csv(F: KernelField, path) -> None:
    """Write the lower-triangle nodes of ``F``: i, j, x, t and re/im of each entry."""
    M = F.grid.M
    header = ["i", "j", "x", "t"]
    for name in ("11", "12", "21", "22"):
        header += [f"re{name}", f"im{name}"]
    ents = [e.values for e in F.entries()]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for i in range(M + 1):
            for j in range(i + 1):
                row = [i, j, f"{i / M:.17g}", f"{j / M:.17g}"]
                for e in ents:
                    row += [f"{e[i, j].real:.17g}", f"{e[i, j].imag:.17g}"]
                w.writerow(row)
