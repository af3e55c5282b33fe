"""Fundamental matrix ``D(x, mu)`` of ``D' + J D = A_mu D``, ``D(0) = I``.

``A_mu = i mu diag(1, -1)`` and ``J = [[0, sigma1], [sigma2, 0]]``.  Two
independent evaluations are offered (a high-order ODE integrator and the
transformation-kernel representation) plus three asymptotic approximants.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
from scipy.integrate import solve_ivp

from .errors import DomainError, GridMismatchError, NumericalError
from .kernel import KernelBundle, KernelField, row_transform
from .numerics import CellQuadrature, prefix_at
from .potential import PotentialPair, poly_eval

log = logging.getLogger(__name__)

METHODS = ("direct", "kernel", "approx_leading", "approx_D0", "approx_N")
ODE_RTOL = 1e-13
ODE_ATOL = 1e-15
DET_THRESHOLD = 1e-8


@dataclass(frozen=True)
class FundamentalSample:
    mu: complex
    x: np.ndarray
    values: np.ndarray  # (n, 2, 2)
    method: str

    def __post_init__(self) -> None:
        if self.method not in METHODS:
            raise ValueError(f"unknown method {self.method!r}")
        if self.values.shape != (self.x.size, 2, 2):
            raise ValueError("values must have shape (len(x), 2, 2)")

    def at_end(self) -> np.ndarray:
        return self.values[-1]

    def entry(self, a: int, b: int) -> np.ndarray:
        return self.values[:, a - 1, b - 1]

    def det(self) -> np.ndarray:
        v = self.values
        return v[:, 0, 0] * v[:, 1, 1] - v[:, 0, 1] * v[:, 1, 0]

    def max_diff(self, other: "FundamentalSample") -> float:
        if self.x.shape != other.x.shape or np.max(np.abs(self.x - other.x), initial=0.0) > 1e-14:
            raise GridMismatchError("samples live on different x grids")
        return float(np.max(np.abs(self.values - other.values)))


def uniform_grid(M: int) -> np.ndarray:
    return np.arange(M + 1) / M


def _check_x(x) -> np.ndarray:
    x = np.atleast_1d(np.asarray(x, dtype=float))
    if np.any(x < 0) or np.any(x > 1):
        raise DomainError("x must lie in [0, 1]")
    if np.any(np.diff(x) < 0):
        raise DomainError("x grid must be sorted")
    return x


def _pack(values: np.ndarray) -> np.ndarray:
    out = np.empty(values.shape[:-1] + (2, 2), dtype=complex)
    out[..., 0, 0], out[..., 0, 1], out[..., 1, 0], out[..., 1, 1] = (values[..., k] for k in range(4))
    return out


# -- ODE oracle ------------------------------------------------------------------

def solve_direct_batch(pair: PotentialPair, mus, x) -> np.ndarray:
    """``D(x_k, mu_b)`` for all ``b, k``; shape ``(B, len(x), 2, 2)``.

    DOP853 with adaptive steps, restarted at every breakpoint of the
    potentials and every output node, so no step straddles a jump.
    """
    mus = np.atleast_1d(np.asarray(mus, dtype=complex))
    x = _check_x(x)
    B = mus.size
    pts = pair.breaks(extra=x)
    pts = pts[pts <= x[-1]] if x[-1] < 1.0 else pts
    if pts[-1] < x[-1]:
        pts = np.append(pts, x[-1])
    c1 = pair.sigma1.pieces(pts)
    c2 = pair.sigma2.pieces(pts)
    iMu = (1j * mus)[:, None]

    # state: (B, 2 rows, 2 cols) flattened; row 0 = first row of D
    y = np.zeros((B, 2, 2), dtype=complex)
    y[:, 0, 0] = y[:, 1, 1] = 1.0
    out = np.empty((B, x.size, 2, 2), dtype=complex)
    xi = 0
    while xi < x.size and x[xi] == 0.0:
        out[:, xi] = y
        xi += 1
    for k in range(pts.size - 1):
        a, b = pts[k], pts[k + 1]
        ca, cb = c1[k], c2[k]
        def rhs(t, yf, a=a, ca=ca, cb=cb):
            Y = yf.reshape(B, 2, 2)
            s1 = poly_eval(ca[None, :], np.array([t - a]))[0]
            s2 = poly_eval(cb[None, :], np.array([t - a]))[0]
            d = np.empty_like(Y)
            d[:, 0] = iMu * Y[:, 0] - s1 * Y[:, 1]
            d[:, 1] = -iMu * Y[:, 1] - s2 * Y[:, 0]
            return d.ravel()

        sol = solve_ivp(rhs, (a, b), y.ravel(), method="DOP853", rtol=ODE_RTOL, atol=ODE_ATOL)
        if not sol.success:
            raise NumericalError(f"ODE integration failed on segment [{a:.6g}, {b:.6g}]: {sol.message}")
        y = sol.y[:, -1].reshape(B, 2, 2)
        while xi < x.size and abs(x[xi] - b) <= 1e-15:
            out[:, xi] = y
            xi += 1
    if xi != x.size:
        raise NumericalError("output nodes not reached by the integrator")
    return out


def solve_direct(pair: PotentialPair, mu: complex, M: int = 512, x=None) -> FundamentalSample:
    """ODE oracle on the grid ``i / M`` (or on explicit nodes ``x``)."""
    if x is None:
        if M < 64:
            raise ValueError("direct solves need M >= 64")
        x = uniform_grid(M)
    x = _check_x(x)
    vals = solve_direct_batch(pair, [mu], x)[0]
    s = FundamentalSample(complex(mu), x, vals, "direct")
    dets = np.abs(s.det())
    if np.min(dets) <= DET_THRESHOLD:
        log.warning("small determinant %.3g for mu=%s", np.min(dets), mu)
    return s


def ode_residual(pair: PotentialPair, mu: complex, x_points, order: int = 8) -> np.ndarray:
    """Residual ``|D' + J D - A D| / max(1, |mu|)`` at each point, with ``D'`` by finite differences.

    The stencil is kept inside a single smooth piece of the potentials.
    Points too close to a breakpoint give ``nan``.
    """
    x_points = np.atleast_1d(np.asarray(x_points, float))
    half = order // 2
    offs = np.arange(-half, half + 1)
    V = offs[None, :] ** np.arange(offs.size)[:, None]
    rhs = np.zeros(offs.size)
    rhs[1] = 1.0
    fd = np.linalg.solve(V.astype(float), rhs)
    brk = pair.breaks()
    res = np.full(x_points.size, np.nan)
    scale = max(1.0, abs(mu))
    for n, x0 in enumerate(x_points):
        k = np.clip(np.searchsorted(brk, x0, side="right") - 1, 0, brk.size - 2)
        room = min(x0 - brk[k], brk[k + 1] - x0)
        delta = min(0.05 / scale, 0.9 * room / half)
        if delta < 1e-5:
            continue
        xs = x0 + delta * offs
        D = solve_direct_batch(pair, [mu], xs)[0]
        dD = np.tensordot(fd, D, axes=(0, 0)) / delta
        D0 = D[half]
        s1, s2 = pair.sigma1(x0), pair.sigma2(x0)
        J = np.array([[0, s1], [s2, 0]])
        A = np.diag([1j * mu, -1j * mu])
        res[n] = np.max(np.abs(dD + J @ D0 - A @ D0)) / scale
    return res


# -- kernel representation ---------------------------------------------------------

def _subsample(grid_M: int, M: int | None) -> tuple[np.ndarray, int]:
    if M is None:
        M = grid_M
    if grid_M % M:
        raise GridMismatchError(f"kernel grid M={grid_M} is not a multiple of requested M={M}")
    stride = grid_M // M
    return np.arange(0, grid_M + 1, stride), M


def _free_part(pair: PotentialPair, mu: complex, x: np.ndarray) -> tuple[np.ndarray, ...]:
    e = np.exp(1j * mu * x)
    em = np.exp(-1j * mu * x)
    p1 = prefix_at(pair.sigma1, -2 * mu, x)
    p2 = prefix_at(pair.sigma2, 2 * mu, x)
    return e, em, p1, p2


def kernel_row_transforms(pair: PotentialPair, mu: complex, x, n_terms: int) -> np.ndarray:
    """Row integrals of the leading Neumann terms ``T~^n J~``, ``n < n_terms``.

    Entry ``(a, b)`` of ``R[n, k]`` is ``int_0^{x_k} e^{-+2i mu t} (T~^n J~)_{ab}(x_k, t) dt``
    (minus sign for row 1).  These satisfy

        R^n_{1b}(x) = -int_0^x sigma1(s) e^{-2i mu s} R^{n-1}_{2b}(s) ds,
        R^n_{2b}(x) = -int_0^x sigma2(s) e^{+2i mu s} R^{n-1}_{1b}(s) ds,

    so they are iterated integrals of the potentials and need no triangle
    grid.  Evaluated on Gauss cells split at every breakpoint.
    """
    x = _check_x(x)
    cq = CellQuadrature.build(pair.breaks(extra=x), 4.0 * abs(mu) + 1.0, n=14)
    X = cq.nodes
    w1 = pair.sigma1(X) * np.exp(-2j * mu * X)
    w2 = pair.sigma2(X) * np.exp(2j * mu * X)
    out = np.zeros((n_terms, x.size, 2, 2), dtype=complex)
    if n_terms == 0:
        return out
    # node values of the current term, indexed [a][b]
    cur = [[cq.node_prefix(w1 * cq.node_prefix(w2)), None], [None, cq.node_prefix(w2 * cq.node_prefix(w1))]]
    out[0, :, 0, 0] = cq.at(cq.edge_prefix(w1 * cq.node_prefix(w2)), x)
    out[0, :, 1, 1] = cq.at(cq.edge_prefix(w2 * cq.node_prefix(w1)), x)
    for n in range(1, n_terms):
        nxt = [[None, None], [None, None]]
        for b in range(2):
            if cur[1][b] is not None:
                g = -w1 * cur[1][b]
                nxt[0][b] = cq.node_prefix(g)
                out[n, :, 0, b] = cq.at(cq.edge_prefix(g), x)
            if cur[0][b] is not None:
                g = -w2 * cur[0][b]
                nxt[1][b] = cq.node_prefix(g)
                out[n, :, 1, b] = cq.at(cq.edge_prefix(g), x)
        cur = nxt
    return out


def _grid_row_transforms(F: KernelField, mu: complex, rows: np.ndarray) -> np.ndarray:
    out = np.empty((rows.size, 2, 2), dtype=complex)
    for (a, b), f in zip(((0, 0), (0, 1), (1, 0), (1, 1)), F.entries()):
        out[:, a, b] = row_transform(f, -2 * mu if a == 0 else 2 * mu)[rows]
    return out


def _assemble(pair: PotentialPair, mu: complex, x: np.ndarray, R: np.ndarray) -> np.ndarray:
    e, em, p1, p2 = _free_part(pair, mu, x)
    vals = np.stack([e * (1 + R[:, 0, 0]), e * (R[:, 0, 1] - p1), em * (R[:, 1, 0] - p2), em * (1 + R[:, 1, 1])], axis=-1)
    return _pack(vals)


def solve_via_kernel(
    pair: PotentialPair, Q: KernelField | KernelBundle, mu: complex, M: int | None = None
) -> FundamentalSample:
    """``D = e^{xA} + int_0^x e^{(x-2t)A} [Q(x, t) - J(t)] dt``.

    The potential part is exact.  Given a :class:`KernelBundle`, the
    leading Neumann terms it carries are integrated exactly (they hold the
    roughest part of ``Q`` near the diagonal) and only the remainder goes
    through cubic Filon weights along the grid rows; a bare
    :class:`KernelField` is integrated on the grid as is.
    """
    if isinstance(Q, KernelBundle):
        lead = Q.terms
        field = Q.Q
        for t in lead:
            field = field - t
    else:
        lead = ()
        field = Q
    rows, M = _subsample(field.grid.M, M)
    x = uniform_grid(M)
    R = _grid_row_transforms(field, mu, rows)
    if lead:
        R = R + kernel_row_transforms(pair, mu, x, len(lead)).sum(axis=0)
    return FundamentalSample(complex(mu), x, _assemble(pair, mu, x, R), "kernel")


# -- approximants ----------------------------------------------------------------

def approx_leading(mu: complex, x_grid) -> FundamentalSample:
    x = _check_x(x_grid)
    vals = np.zeros((x.size, 2, 2), dtype=complex)
    vals[:, 0, 0] = np.exp(1j * mu * x)
    vals[:, 1, 1] = np.exp(-1j * mu * x)
    return FundamentalSample(complex(mu), x, vals, "approx_leading")


def diag_corrections(pair: PotentialPair, mu: complex, x) -> tuple[np.ndarray, np.ndarray]:
    """``int_0^x e^{-2i mu t} s~1(x,t) dt`` and ``int_0^x e^{2i mu t} s~2(x,t) dt``."""
    R = kernel_row_transforms(pair, mu, x, 1)[0]
    return R[:, 0, 0], R[:, 1, 1]


def approx_D0(pair: PotentialPair, mu: complex, x_grid) -> FundamentalSample:
    """``e^{xA} + D_0``: first-order terms from ``J`` and the ``s~`` diagonal."""
    x = _check_x(x_grid)
    e, em, p1, p2 = _free_part(pair, mu, x)
    i1, i2 = diag_corrections(pair, mu, x)
    vals = np.stack([e * (1 + i1), -e * p1, -em * p2, em * (1 + i2)], axis=-1)
    return FundamentalSample(complex(mu), x, _pack(vals), "approx_D0")


def approx_N(
    pair: PotentialPair, N: KernelField, mu: complex, M: int | None = None, quadrature: str = "exact"
) -> FundamentalSample:
    """``e^{xA} + int e^{(x-2t)A}(N - J)`` on the grid of ``N``.

    ``N = J~ + T~J~``, so with ``quadrature="exact"`` its row integrals are
    the first two iterated-integral terms; ``"grid"`` uses the sampled
    off-diagonal entries of ``N`` instead (the diagonal is exact either way).
    """
    rows, M = _subsample(N.grid.M, M)
    x = uniform_grid(M)
    R = kernel_row_transforms(pair, mu, x, 2).sum(axis=0)
    if quadrature == "grid":
        g = _grid_row_transforms(N, mu, rows)
        R[:, 0, 1], R[:, 1, 0] = g[:, 0, 1], g[:, 1, 0]
    elif quadrature != "exact":
        raise ValueError("quadrature must be 'exact' or 'grid'")
    return FundamentalSample(complex(mu), x, _assemble(pair, mu, x, R), "approx_N")


def constant_solution(c: complex, mu: complex, x) -> np.ndarray:
    """Closed form for ``sigma1 = sigma2 = c``: ``cos(wx) I + sin(wx)/w [[i mu, -c], [-c, -i mu]]``."""
    x = np.atleast_1d(np.asarray(x, float))
    w = np.sqrt(complex(mu) ** 2 - complex(c) ** 2)
    cw = np.cos(w * x)
    sw = x.copy().astype(complex) if w == 0 else np.sin(w * x) / w
    vals = np.empty((x.size, 2, 2), dtype=complex)
    vals[:, 0, 0] = cw + 1j * mu * sw
    vals[:, 0, 1] = -c * sw
    vals[:, 1, 0] = -c * sw
    vals[:, 1, 1] = cw - 1j * mu * sw
    return vals
