"""Numerical engines shared by the kernel, solver and spectrum modules.

* closed-form oscillatory integrals of polynomials,
* prefix ("windowed") transforms ``x -> int_0^x exp(i w t) sigma(t) dt``,
* nested prefix integrals on oscillation-resolved Gauss-Legendre cells,
* product-integration stencils (cubic Lagrange against a weight),
* zero counting by the argument principle and secant polishing.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
from numpy.polynomial import legendre as npleg

from .errors import BoundaryZeroError, NumericalError
from .potential import Potential, merge_breaks

# |z| below which the moments use their power series; upward recursion is
# stable once |z| exceeds the polynomial degree by a fair margin.
TAYLOR_SWITCH = 2.0
_TAYLOR_TERMS = 34


def osc_moments(z, kmax: int) -> np.ndarray:
    """``M_k(z) = int_0^1 u^k exp(i z u) du`` for ``k = 0..kmax``.

    Output shape is ``np.shape(z) + (kmax + 1,)``.
    """
    z = np.asarray(z, dtype=complex)
    out = np.empty(z.shape + (kmax + 1,), dtype=complex)
    small = np.abs(z) <= TAYLOR_SWITCH
    if np.any(small):
        iz = 1j * z[small]
        term = np.ones_like(iz)
        acc = np.zeros(iz.shape + (kmax + 1,), dtype=complex)
        ks = np.arange(kmax + 1)
        for j in range(_TAYLOR_TERMS):
            acc += term[..., None] / (ks + j + 1)
            term = term * iz / (j + 1)
        out[small] = acc
    big = ~small
    if np.any(big):
        iz = 1j * z[big]
        e = np.exp(iz)
        prev = (e - 1.0) / iz
        out[big, 0] = prev
        for k in range(1, kmax + 1):
            prev = (e - k * prev) / iz
            out[big, k] = prev
    return out


def piece_integrals(left: np.ndarray, width: np.ndarray, coeffs: np.ndarray, omega) -> np.ndarray:
    """``int_{a}^{a+h} sum_k c_k (t-a)^k exp(i w t) dt`` for every piece.

    ``omega`` may be a scalar or an array of shape ``(W,)``; the result has
    shape ``(P,)`` or ``(W, P)`` respectively.
    """
    omega = np.asarray(omega, dtype=complex)
    deg = coeffs.shape[-1] - 1
    w = omega[..., None]
    mom = osc_moments(w * width, deg)
    hp = width[:, None] ** np.arange(1, deg + 2)
    return np.exp(1j * w * left) * np.sum(coeffs * hp * mom, axis=-1)


def osc_segment_integral(coeffs: Sequence[complex], a: float, b: float, omega: complex) -> complex:
    """``int_a^b poly(t) exp(i w t) dt``; ``coeffs`` are in the local variable ``t - a``."""
    c = np.atleast_2d(np.asarray(coeffs, dtype=complex))
    return complex(piece_integrals(np.array([a]), np.array([b - a]), c, omega)[0])


def times_t(breaks: np.ndarray, coeffs: np.ndarray) -> np.ndarray:
    """Local coefficients of ``t * sigma(t)`` (degree grows by one)."""
    out = np.zeros((coeffs.shape[0], coeffs.shape[1] + 1), dtype=complex)
    out[:, :-1] += breaks[:-1, None] * coeffs
    out[:, 1:] += coeffs
    return out


def _raw_prefix(pot: Potential, omega, pts: np.ndarray, weight_t: bool = False) -> np.ndarray:
    pts = np.asarray(pts, dtype=float)
    allpts = merge_breaks(pot, extra=pts)
    coeffs = pot.pieces(allpts)
    if weight_t:
        coeffs = times_t(allpts, coeffs)
    vals = piece_integrals(allpts[:-1], np.diff(allpts), coeffs, omega)
    cum = np.concatenate([np.zeros(vals.shape[:-1] + (1,), complex), np.cumsum(vals, axis=-1)], axis=-1)
    return cum[..., np.searchsorted(allpts, pts)]


def prefix_at(pot: Potential, omega, pts, weight_t: bool = False) -> np.ndarray:
    """``int_0^x exp(i w t) sigma(t) dt`` (times ``t`` if ``weight_t``) at each ``x`` in ``pts``.

    Exact up to rounding: the integral is assembled from closed-form
    pieces between the merged breakpoints.
    """
    pts = np.asarray(pts, dtype=float)
    order = np.argsort(pts, kind="stable")
    res = _raw_prefix(pot, omega, pts[order], weight_t)
    out = np.empty_like(res)
    out[..., order] = res
    return out


def total_transform(pot: Potential, omegas) -> np.ndarray:
    """``int_0^1 exp(i w t) sigma(t) dt`` for an array of frequencies."""
    omegas = np.asarray(omegas, dtype=complex)
    vals = piece_integrals(pot.breaks[:-1], np.diff(pot.breaks), pot.coeffs, omegas.ravel())
    return vals.sum(axis=-1).reshape(omegas.shape)


@dataclass(frozen=True)
class OscTransform:
    """Prefix transform of ``source`` at frequency ``omega`` on the grid ``i / M``."""

    source: Potential
    omega: complex
    x: np.ndarray
    values: np.ndarray


def prefix_transform(pot: Potential, omega: complex, M: int) -> OscTransform:
    if M < 2:
        raise ValueError("grid size M must be >= 2")
    x = np.arange(M + 1) / M
    vals = prefix_at(pot, omega, x)
    vals[0] = 0.0
    return OscTransform(pot, complex(omega), x, vals)


# -- Gauss cells ---------------------------------------------------------------

@dataclass(frozen=True)
class CellQuadrature:
    """Gauss-Legendre nodes on cells that resolve a given oscillation rate.

    ``integ[m, l]`` integrates the Lagrange basis polynomial ``l`` from the
    cell start to node ``m`` (in unit-cell coordinates).
    """

    edges: np.ndarray
    nodes: np.ndarray
    weights: np.ndarray
    integ: np.ndarray

    @classmethod
    def build(cls, points, omega_max: float = 0.0, n: int = 12, max_h: float = 1.0 / 16) -> "CellQuadrature":
        points = np.unique(np.concatenate([np.asarray(points, float), [0.0, 1.0]]))
        hmax = min(max_h, 1.5 / (abs(omega_max) + 1e-300))
        lengths = np.diff(points)
        counts = np.maximum(1, np.ceil(lengths / hmax - 1e-12).astype(int))
        edges = np.concatenate(
            [points[k] + lengths[k] * np.arange(counts[k]) / counts[k] for k in range(lengths.size)]
            + [[1.0]]
        )
        xg, wg = _gauss(n)
        h = np.diff(edges)
        nodes = edges[:-1, None] + h[:, None] * xg
        weights = h[:, None] * wg
        return cls(edges, nodes, weights, _integration_matrix(n))

    @property
    def h(self) -> np.ndarray:
        return np.diff(self.edges)

    def edge_prefix(self, values: np.ndarray) -> np.ndarray:
        """Cumulative integral at every cell edge (length ``C + 1``)."""
        cell = np.sum(values * self.weights, axis=-1)
        return np.concatenate([np.zeros(cell.shape[:-1] + (1,), complex), np.cumsum(cell, axis=-1)], axis=-1)

    def node_prefix(self, values: np.ndarray) -> np.ndarray:
        """Cumulative integral at every Gauss node."""
        start = self.edge_prefix(values)[..., :-1]
        local = (values @ self.integ.T) * self.h[:, None]
        return start[..., None] + local

    def at(self, edge_values: np.ndarray, pts) -> np.ndarray:
        idx = np.searchsorted(self.edges, pts)
        if np.any(np.abs(self.edges[np.minimum(idx, self.edges.size - 1)] - pts) > 1e-14):
            raise ValueError("requested points are not cell edges")
        return edge_values[..., idx]


_GAUSS_CACHE: dict[int, tuple[np.ndarray, np.ndarray]] = {}


def _gauss(n: int) -> tuple[np.ndarray, np.ndarray]:
    if n not in _GAUSS_CACHE:
        x, w = npleg.leggauss(n)
        _GAUSS_CACHE[n] = (0.5 * (x + 1.0), 0.5 * w)
    return _GAUSS_CACHE[n]


def _integration_matrix(n: int) -> np.ndarray:
    x, _ = _gauss(n)
    t = 2.0 * x - 1.0
    V = npleg.legvander(t, n - 1)
    coef = np.linalg.inv(V)  # column l: Legendre coefficients of basis l
    S = np.empty((n, n))
    for l in range(n):
        antider = npleg.legint(coef[:, l], lbnd=-1.0)
        S[:, l] = 0.5 * npleg.legval(t, antider)
    return S


def _omega_scale(*omegas) -> float:
    return float(sum(abs(complex(w)) for w in omegas))


def prefix_double(
    f: Potential, g: Potential, omega_outer: complex, omega_inner: complex, pts, n: int = 12
) -> np.ndarray:
    """``int_0^x f(t) e^{i wo t} int_0^t g(s) e^{i wi s} ds dt`` at each ``x`` in ``pts``.

    The inner transform is exact (closed form); the outer integral uses
    Gauss-Legendre on cells fine enough for the combined oscillation.
    """
    pts = np.atleast_1d(np.asarray(pts, dtype=float))
    cq = CellQuadrature.build(merge_breaks(f, g, extra=pts), _omega_scale(omega_outer, omega_inner), n)
    nodes = cq.nodes.ravel()
    inner = prefix_at(g, omega_inner, nodes).reshape(cq.nodes.shape)
    vals = f(cq.nodes) * np.exp(1j * omega_outer * cq.nodes) * inner
    return cq.at(cq.edge_prefix(vals), pts)


def triangle_double_integral(f: Potential, g: Potential, omega_outer: complex, omega_inner: complex) -> complex:
    """``int_0^1 int_0^t f(t) g(s) e^{i wo t} e^{i wi s} ds dt``."""
    return complex(prefix_double(f, g, omega_outer, omega_inner, [1.0])[0])


def nested_prefix(chain: Sequence[tuple[Potential, complex]], pts, n: int = 14) -> np.ndarray:
    """Iterated prefix integrals, innermost first.

    ``P_1(x) = int_0^x s_1 e^{i w_1 t}`` and
    ``P_k(x) = int_0^x s_k(t) e^{i w_k t} P_{k-1}(t) dt``; returns ``P_K`` at ``pts``.
    """
    pts = np.atleast_1d(np.asarray(pts, dtype=float))
    pots = [c[0] for c in chain]
    cq = CellQuadrature.build(merge_breaks(*pots, extra=pts), _omega_scale(*(c[1] for c in chain)), n)
    prev = np.ones_like(cq.nodes, dtype=complex)
    edge_vals = None
    for pot, w in chain:
        vals = pot(cq.nodes) * np.exp(1j * w * cq.nodes) * prev
        edge_vals = cq.edge_prefix(vals)
        prev = cq.node_prefix(vals)
    return cq.at(edge_vals, pts)


# -- product-integration stencils ------------------------------------------------

STENCILS: dict[str, tuple[int, ...]] = {
    "lin": (0, 1),
    "quad_left": (0, 1, 2),
    "quad_right": (-1, 0, 1),
    "left": (0, 1, 2, 3),
    "int": (-1, 0, 1, 2),
    "right": (-2, -1, 0, 1),
}


def lagrange_matrix(offsets: Sequence[int]) -> np.ndarray:
    """``C[q, m]`` with ``l_q(u) = sum_m C[q, m] u^m`` the Lagrange basis on ``offsets``."""
    o = np.asarray(offsets, dtype=float)
    V = o[:, None] ** np.arange(o.size)
    return np.linalg.inv(V.T)


_LAGRANGE = {name: lagrange_matrix(off) for name, off in STENCILS.items()}


def stencil_weights(moments: np.ndarray) -> dict[str, np.ndarray]:
    """Weights ``int_cell w(s) l_q(u) ds`` for every stencil.

    ``moments[..., m] = int_cell w(s) u^m ds`` with ``u`` the unit-cell
    coordinate, ``m = 0..3``.
    """
    return {name: moments[..., : C.shape[1]] @ C.T for name, C in _LAGRANGE.items()}


def filon_moments(omega: complex, M: int) -> np.ndarray:
    """Moments of ``exp(i w t)`` against ``u^m`` on every cell of the grid ``i / M``."""
    h = 1.0 / M
    mom = osc_moments(np.array([omega * h]), 3)[0]
    phase = np.exp(1j * omega * np.arange(M) * h)
    return h * phase[:, None] * mom[None, :]


def filon_line_weights(M: int, omegas) -> np.ndarray:
    """Node weights ``W[b]`` with ``W[b] @ v ~ int_0^1 exp(i w_b t) v(t) dt`` for samples ``v(k/M)``.

    Cubic Lagrange interpolation (one-sided at both ends) against exact
    oscillatory moments; vectorized over the frequencies.
    """
    if M < 3:
        raise ValueError("need M >= 3")
    omegas = np.atleast_1d(np.asarray(omegas, dtype=complex))
    h = 1.0 / M
    mom = osc_moments(omegas * h, 3)
    phase = np.exp(1j * omegas[:, None] * (np.arange(M) * h))
    out = np.zeros((omegas.size, M + 1), dtype=complex)
    w_left = h * phase[:, 0, None] * (mom @ _LAGRANGE["left"].T)
    w_right = h * phase[:, M - 1, None] * (mom @ _LAGRANGE["right"].T)
    w_int = (mom @ _LAGRANGE["int"].T) * h  # same for every cell up to the phase
    out[:, 0:4] += w_left
    inner = phase[:, 1 : M - 1]
    for q in range(4):
        out[:, q : q + M - 2] += inner * w_int[:, q, None]
    out[:, M - 3 :] += w_right
    return out


def poly_cell_moments(pot: Potential, M: int) -> np.ndarray:
    """Exact ``int_cell sigma(s) u^m ds`` (``m = 0..3``) on every cell of ``i / M``."""
    grid = np.arange(M + 1) / M
    pts = merge_breaks(pot, extra=grid)
    xg, wg = _gauss(4)  # exact up to degree 7
    h = np.diff(pts)
    nodes = pts[:-1, None] + h[:, None] * xg
    vals = pot(nodes) * h[:, None] * wg
    cell = np.minimum(np.floor(pts[:-1] * M + 1e-9).astype(int), M - 1)
    u = nodes * M - cell[:, None]
    mom = np.zeros((M, 4), dtype=complex)
    for m in range(4):
        np.add.at(mom[:, m], cell, np.sum(vals * u**m, axis=1))
    return mom


# -- root localization -------------------------------------------------------------

@dataclass(frozen=True)
class SearchBox:
    center: complex
    half_width: float
    half_height: float
    samples: int = 64

    def __post_init__(self) -> None:
        if self.half_width <= 0 or self.half_height <= 0:
            raise ValueError("box half sizes must be positive")

    def contains(self, z: complex, slack: float = 0.0) -> bool:
        dz = z - self.center
        return abs(dz.real) <= self.half_width + slack and abs(dz.imag) <= self.half_height + slack

    def boundary(self, s: np.ndarray) -> np.ndarray:
        """Counter-clockwise boundary point for parameter ``s`` in ``[0, 4)``."""
        w, h = self.half_width, self.half_height
        corners = np.array([-w - 1j * h, w - 1j * h, w + 1j * h, -w + 1j * h, -w - 1j * h])
        k = np.minimum(np.floor(s).astype(int), 3)
        frac = s - k
        return self.center + corners[k] + frac * (corners[k + 1] - corners[k])

    def split(self) -> list["SearchBox"]:
        """Halve along the longer side."""
        w, h = self.half_width, self.half_height
        if w >= h:
            offs = [-w / 2, w / 2]
            return [SearchBox(self.center + o, w / 2, h, self.samples) for o in offs]
        offs = [-1j * h / 2, 1j * h / 2]
        return [SearchBox(self.center + o, w, h / 2, self.samples) for o in offs]


PhiFn = Callable[[np.ndarray], np.ndarray]


def winding_count(phi: PhiFn, box: SearchBox, max_points: int = 1 << 14) -> int:
    """Number of zeros of ``phi`` inside ``box`` (with multiplicity).

    ``phi`` must accept an array of complex points.  The boundary is
    refined until consecutive argument increments are below ``pi/3`` and
    consecutive samples do not differ by more than their modulus.
    """
    s = np.linspace(0.0, 4.0, 4 * box.samples + 1)
    vals = np.asarray(phi(box.boundary(s[:-1])), dtype=complex)
    vals = np.append(vals, vals[0])
    while True:
        mag = np.abs(vals)
        if np.min(mag) < 1e-12 * np.max(mag) or not np.all(np.isfinite(vals)):
            raise BoundaryZeroError(f"zero of phi near boundary of box {box}; shift the box")
        darg = np.angle(vals[1:] / vals[:-1])
        jump = np.abs(vals[1:] - vals[:-1])
        bad = (np.abs(darg) > np.pi / 3) | (jump > np.minimum(mag[1:], mag[:-1]))
        if not np.any(bad):
            total = np.sum(darg) / (2 * np.pi)
            count = int(round(total))
            if abs(total - count) > 1e-6:
                raise NumericalError(f"non-integer winding {total} on box {box}")
            return count
        if s.size + np.count_nonzero(bad) > max_points:
            raise NumericalError(f"winding refinement limit reached on box {box}")
        mids = 0.5 * (s[:-1][bad] + s[1:][bad])
        mid_vals = np.asarray(phi(box.boundary(mids)), dtype=complex)
        s_new = np.concatenate([s, mids])
        v_new = np.concatenate([vals, mid_vals])
        order = np.argsort(s_new, kind="stable")
        s, vals = s_new[order], v_new[order]


@dataclass(frozen=True)
class PolishResult:
    root: complex
    iterations: int
    residual: float
    subdivisions: int


def _secant(phi_scalar, x0: complex, tol: float, box: SearchBox, max_iter: int):
    x1 = x0 + 1e-6 * (1.0 + abs(x0)) * np.exp(0.4j)
    f0, f1 = phi_scalar(x0), phi_scalar(x1)
    for it in range(1, max_iter + 1):
        denom = f1 - f0
        if denom == 0:
            return None, it, abs(f1)
        x2 = x1 - f1 * (x1 - x0) / denom
        if not np.isfinite(x2) or not box.contains(x2, slack=1e-9):
            return None, it, abs(f1)
        f2 = phi_scalar(x2)
        slope = abs(denom / (x1 - x0))
        if abs(x2 - x1) < tol and abs(f2) <= 10 * tol * max(slope, 1e-300):
            return x2, it, abs(f2)
        x0, f0, x1, f1 = x1, f1, x2, f2
    return None, max_iter, abs(f1)


def root_polish(
    phi: PhiFn,
    start: complex,
    tol: float,
    box: SearchBox,
    max_iter: int = 60,
    max_subdivisions: int = 40,
    full_output: bool = False,
):
    """Derivative-free secant polish of a simple zero known to lie in ``box``.

    If the iteration diverges or leaves the box, the box is halved
    repeatedly, keeping the half whose winding number is 1, and the
    secant is restarted from its centre.
    """

    def phi_scalar(z):
        return complex(np.asarray(phi(np.array([z], dtype=complex)))[0])

    iters = 0
    subdiv = 0
    current = box
    x0 = complex(start)
    if not current.contains(x0):
        x0 = current.center
    while True:
        root, it, res = _secant(phi_scalar, x0, tol, current, max_iter)
        iters += it
        if root is not None:
            out = PolishResult(complex(root), iters, float(res), subdiv)
            return out if full_output else out.root
        if subdiv >= max_subdivisions:
            raise NumericalError(
                f"root polish failed in {box} after {iters} iterations and {subdiv} subdivisions"
            )
        chosen = None
        for part in current.split():
            try:
                cnt = winding_count(phi, part)
            except BoundaryZeroError:
                # the zero sits on the cut: nudge the halves
                part = SearchBox(part.center + 0.013 * part.half_width, part.half_width * 1.05,
                                 part.half_height * 1.05, part.samples)
                cnt = winding_count(phi, part)
            if cnt == 1:
                chosen = part
                break
        if chosen is None:
            raise NumericalError(f"no sub-box with a single zero inside {current}")
        current = chosen
        x0 = current.center
        subdiv += 1


def secant_batch(phi: PhiFn, starts, tol: float, max_iter: int = 30) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Lock-step secant iteration on many independent zeros.

    Returns ``(roots, iterations, converged)``; points that stall keep
    their last iterate and are flagged unconverged for the caller's
    fallback.
    """
    x0 = np.asarray(starts, dtype=complex).copy()
    x1 = x0 + 1e-6 * (1.0 + np.abs(x0)) * np.exp(0.4j)
    f0 = np.asarray(phi(x0), dtype=complex)
    f1 = np.asarray(phi(x1), dtype=complex)
    iters = np.zeros(x0.size, dtype=int)
    done = np.zeros(x0.size, dtype=bool)
    stalled = np.zeros(x0.size, dtype=bool)
    for _ in range(max_iter):
        act = np.flatnonzero(~done)
        if act.size == 0:
            break
        denom = f1[act] - f0[act]
        ok = denom != 0
        step = np.zeros(act.size, dtype=complex)
        step[ok] = f1[act][ok] * (x1[act][ok] - x0[act][ok]) / denom[ok]
        x2 = x1[act] - step
        f2 = np.asarray(phi(x2), dtype=complex)
        iters[act] += 1
        x0[act], f0[act] = x1[act], f1[act]
        x1[act], f1[act] = x2, f2
        stalled[act] = ~ok & (f1[act] != 0)
        done[act] = (np.abs(step) < tol) | ~ok
    return x1, iters, done & ~stalled


def dyadic_blocks(ns: np.ndarray, start: int = 1) -> list[np.ndarray]:
    """Boolean masks of the dyadic blocks ``[2^k, 2^{k+1})`` covering ``ns``; the last block is closed."""
    ns = np.asarray(ns)
    kmin = int(math.floor(math.log2(max(start, ns.min()))))
    kmax = int(math.floor(math.log2(ns.max())))
    masks = []
    for k in range(kmin, kmax + 1):
        m = (ns >= 2**k) & (ns < 2 ** (k + 1))
        if np.any(m):
            masks.append(m)
    if len(masks) > 1 and np.count_nonzero(masks[-1]) == 1:
        masks[-2] = masks[-2] | masks[-1]
        masks.pop()
    return masks
