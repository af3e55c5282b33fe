"""Characteristic function, eigenvalues and eigenfunctions of the boundary problem

    y' + J y = i mu J0 y,   y1(0) = y2(0),   y1(1) = y2(1),

whose eigenvalues are the zeros of ``Phi = d11 + d12 - d21 - d22`` at ``x = 1``.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import DomainError, NumericalError
from .kernel import KernelBundle, KernelField, ScalarField, TriangleGrid, neumann_bundle, row_transform
from .numerics import (
    SearchBox,
    dyadic_blocks,
    filon_line_weights,
    prefix_at,
    root_polish,
    secant_batch,
    total_transform,
    triangle_double_integral,
    winding_count,
)
from .potential import PotentialPair
from .remainders import Gamma, gamma
from .solver import _subsample, diag_corrections, kernel_row_transforms, solve_direct, solve_direct_batch, uniform_grid

log = logging.getLogger(__name__)

CONVENTIONS = ("oracle", "paper")
BOX_HALF_WIDTH = 0.45
DIRECT_CHUNK = 32


# -- characteristic function ---------------------------------------------------------

def char_direct(pair: PotentialPair, mus) -> np.ndarray:
    """``Phi`` from the ODE oracle, batched over ``mus`` (grouped by modulus)."""
    mus = np.atleast_1d(np.asarray(mus, dtype=complex))
    out = np.empty(mus.shape, dtype=complex)
    flat = mus.ravel()
    order = np.argsort(np.abs(flat), kind="stable")
    res = np.empty(flat.size, dtype=complex)
    for k in range(0, flat.size, DIRECT_CHUNK):
        idx = order[k : k + DIRECT_CHUNK]
        D = solve_direct_batch(pair, flat[idx], [1.0])[:, 0]
        res[idx] = D[:, 0, 0] + D[:, 0, 1] - D[:, 1, 0] - D[:, 1, 1]
    out[...] = res.reshape(mus.shape)
    return out


class KernelCharFn:
    """``Phi`` from the last grid row of the kernel, vectorized over ``mu``.

    With ``exact_leading=True`` and a :class:`KernelBundle`, the Neumann
    terms carried by the bundle are integrated exactly and only the
    remainder uses grid weights (accurate, a few ms per ``mu``).  Otherwise
    the whole row goes through Filon weights (cheap, used for winding
    counts).
    """

    def __init__(self, pair: PotentialPair, kernel: KernelBundle | KernelField, exact_leading: bool = True):
        self.pair = pair
        if isinstance(kernel, KernelBundle) and exact_leading:
            F = kernel.Q
            for t in kernel.terms:
                F = F - t
            self.n_exact = len(kernel.terms)
        else:
            F = kernel.Q if isinstance(kernel, KernelBundle) else kernel
            self.n_exact = 0
        M = F.grid.M
        self.M = M
        self.g1 = F.e11.values[M] + F.e12.values[M]
        self.g2 = F.e21.values[M] + F.e22.values[M]

    def __call__(self, mus) -> np.ndarray:
        mus = np.atleast_1d(np.asarray(mus, dtype=complex))
        flat = mus.ravel()
        out = np.empty(flat.size, dtype=complex)
        for k in range(0, flat.size, 128):
            m = flat[k : k + 128]
            a1 = filon_line_weights(self.M, -2 * m) @ self.g1 - total_transform(self.pair.sigma1, -2 * m)
            a2 = filon_line_weights(self.M, 2 * m) @ self.g2 - total_transform(self.pair.sigma2, 2 * m)
            if self.n_exact:
                for j, mu in enumerate(m):
                    R = kernel_row_transforms(self.pair, mu, [1.0], self.n_exact).sum(axis=0)[0]
                    a1[j] += R[0, 0] + R[0, 1]
                    a2[j] += R[1, 0] + R[1, 1]
            out[k : k + 128] = np.exp(1j * m) * (1 + a1) - np.exp(-1j * m) * (1 + a2)
        return out.reshape(mus.shape)


def char_fn(pair: PotentialPair, mu, method: str = "direct", kernel: KernelBundle | KernelField | None = None):
    """``Phi(mu)``; scalar in, scalar out."""
    if method == "direct":
        val = char_direct(pair, mu)
    elif method == "kernel":
        if kernel is None:
            raise ValueError("kernel method needs a built kernel")
        val = KernelCharFn(pair, kernel)(mu)
    else:
        raise ValueError(f"unknown method {method!r}")
    return complex(val.ravel()[0]) if np.ndim(mu) == 0 else val


def constant_char(c: complex, mu):
    """Closed form for ``sigma1 = sigma2 = c``: ``2i mu sin(w)/w``, ``w = sqrt(mu^2 - c^2)``."""
    mu = np.asarray(mu, dtype=complex)
    w = np.sqrt(mu**2 - complex(c) ** 2)
    safe = np.where(w == 0, 1.0, w)
    ratio = np.where(w == 0, 1.0, np.sin(safe) / safe)
    return 2j * mu * ratio


# -- leading eigenvalue terms ----------------------------------------------------------

def _fourier_parts(pair: PotentialPair, n: int) -> tuple[complex, complex, complex]:
    w = 2 * math.pi * n
    f1 = complex(total_transform(pair.sigma1, -w))
    f2 = complex(total_transform(pair.sigma2, w))
    dbl = triangle_double_integral(pair.sigma1, pair.sigma2, -w, w)
    return f1, f2, dbl


def asymptotic_mu0(pair: PotentialPair, n: int, convention: str = "oracle") -> complex:
    """Leading correction ``mu_{0,n}`` in ``mu_n = pi n + mu_{0,n} + rho_n``.

    ``oracle`` is the sign/parity pattern fixed by the constant-potential
    closed form; ``paper`` keeps the alternating factors and the opposite
    sign of the double-integral term.
    """
    if n == 0:
        raise DomainError("mu0 is defined for n != 0")
    f1, f2, dbl = _fourier_parts(pair, n)
    if convention == "oracle":
        return (f1 - f2) / 2j + 1j * dbl
    if convention == "paper":
        s = (-1) ** n
        return s * f1 / 2j - s * f2 / 2j - 1j * dbl
    raise ValueError(f"convention must be one of {CONVENTIONS}")


def simplified_mu0(pair: PotentialPair, n: int, convention: str = "oracle") -> complex:
    """Fourier-coefficient part of ``mu_{0,n}`` only (meaningful for ``1 < p <= 4/3``)."""
    if not 1.0 < pair.p <= 4.0 / 3.0:
        raise DomainError("simplified mu0 requires 1 < p <= 4/3")
    if n == 0:
        raise DomainError("mu0 is defined for n != 0")
    f1, f2, _ = _fourier_parts(pair, n)
    if convention == "oracle":
        return (f1 - f2) / 2j
    if convention == "paper":
        return (-1) ** n * (f1 - f2) / 2j
    raise ValueError(f"convention must be one of {CONVENTIONS}")


# -- localization --------------------------------------------------------------------

@dataclass(frozen=True)
class EigenRecord:
    n: int
    mu: complex
    mu0: complex
    mu0_paper: complex
    rho: complex
    phi_residual: float
    iterations: int
    box_winding: int
    phi_kernel_residual: float = math.nan
    accepted: bool = True
    box: SearchBox | None = field(default=None, compare=False)


def default_box(n: int, d: float) -> SearchBox:
    return SearchBox(complex(math.pi * n), BOX_HALF_WIDTH, 2.0 * d)


def cell_box(n: int, d: float) -> SearchBox:
    """Rectangle over ``[pi(n - 1/2), pi(n + 1/2)] x [-2d, 2d]``."""
    return SearchBox(complex(math.pi * n), math.pi / 2, 2.0 * d)


def _n_values(n_range) -> list[int]:
    if isinstance(n_range, tuple) and len(n_range) == 2:
        lo, hi = n_range
        ns = list(range(int(lo), int(hi) + 1))
    else:
        ns = [int(n) for n in n_range]
    if not ns:
        raise ValueError("empty n range")
    return ns


def _split_until_single(phi, box: SearchBox, count: int, budget: int = 24) -> list[SearchBox]:
    """Boxes holding exactly one zero each, found by repeated halving."""
    pending = [(box, count)]
    singles: list[SearchBox] = []
    steps = 0
    while pending:
        b, c = pending.pop()
        if c == 1:
            singles.append(b)
            continue
        if c == 0:
            continue
        steps += 1
        if steps > budget:
            raise NumericalError(f"cannot separate {c} zeros in {b}")
        for part in b.split():
            pending.append((part, winding_count(phi, part)))
    return singles


def locate_eigenvalues(
    pair: PotentialPair,
    n_range,
    d: float = 2.0,
    kernel: KernelBundle | None = None,
    M: int = 512,
    tol: float = 1e-10,
    phi_tol: float = 1e-7,
    check_kernel: bool = True,
) -> list[EigenRecord]:
    """Zeros of ``Phi`` near ``pi n`` for each requested ``n``.

    Winding counts and a first secant pass use the cheap kernel ``Phi``;
    the final polish and the acceptance residual use the ODE oracle.
    """
    ns = _n_values(n_range)
    if kernel is None:
        kernel = neumann_bundle(pair, TriangleGrid(M))
    fast = KernelCharFn(pair, kernel, exact_leading=False)
    accurate = KernelCharFn(pair, kernel, exact_leading=True) if check_kernel else None

    def direct(z):
        return char_direct(pair, z)

    plan = []  # (n, box, winding, start, mu0, mu0_paper)
    for n in ns:
        box = default_box(n, d)
        w = winding_count(fast, box)
        if w != 1:
            box = cell_box(n, d)
            w = winding_count(fast, box)
        mu0 = asymptotic_mu0(pair, n) if n else complex("nan")
        mu0p = asymptotic_mu0(pair, n, "paper") if n else complex("nan")
        if w == 1:
            start = math.pi * n + (mu0 if n and box.contains(math.pi * n + mu0) else 0.0)
            plan.append((n, box, 1, start, mu0, mu0p))
        else:
            log.warning("n=%d: %d zeros in the cell; separating", n, w)
            for sub in _split_until_single(fast, box, w):
                plan.append((n, sub, w, sub.center, mu0, mu0p))

    first = []
    iters0 = []
    for n, box, w, start, *_ in plan:
        res = root_polish(fast, start, tol, box, full_output=True)
        first.append(res.root)
        iters0.append(res.iterations)
    roots, iters, conv = secant_batch(direct, np.array(first), tol)
    phis = direct(roots)
    records = []
    for k, (n, box, w, _, mu0, mu0p) in enumerate(plan):
        mu = complex(roots[k])
        it = int(iters0[k] + iters[k])
        if not conv[k] or not box.contains(mu, 1e-9):
            res = root_polish(direct, first[k], tol, box, full_output=True)
            mu, it = res.root, it + res.iterations
            phis[k] = direct(np.array([mu]))[0]
        kres = float(abs(accurate(np.array([mu]))[0])) if accurate is not None else math.nan
        rho = mu - math.pi * n - mu0 if n else complex("nan")
        lim = phi_tol * (1 + abs(mu))
        ok = (
            w == 1
            and abs(phis[k]) < lim
            and (math.isnan(kres) or kres < lim)
            and abs(mu.imag) <= d
        )
        records.append(EigenRecord(n, mu, mu0, mu0p, rho, float(abs(phis[k])), it, w, kres, ok, box))
    return records


# -- decay diagnostics ----------------------------------------------------------------

@dataclass(frozen=True)
class DecayReport:
    p: float
    q: float
    n: np.ndarray
    rho_abs: np.ndarray
    Gamma_pin: np.ndarray
    gamma_pin: np.ndarray
    partial_sums: np.ndarray
    ratio: np.ndarray

    def block_medians(self, values: np.ndarray) -> np.ndarray:
        return np.array([np.median(values[m]) for m in dyadic_blocks(self.n)])

    def block_increments(self) -> np.ndarray:
        """Increase of the partial sums over each dyadic block."""
        terms = np.diff(np.concatenate([[0.0], self.partial_sums]))
        return np.array([terms[m].sum() for m in dyadic_blocks(self.n)])

    @property
    def sup_ratio(self) -> float:
        return float(np.max(self.ratio))


def decay_report(records: list[EigenRecord], pair: PotentialPair, M: int = 512) -> DecayReport:
    recs = sorted((r for r in records if r.n >= 1), key=lambda r: r.n)
    n = np.array([r.n for r in recs])
    rho = np.array([abs(r.rho) for r in recs])
    G = np.array([Gamma(pair, math.pi * k, M) for k in n])
    g = np.array([gamma(pair, math.pi * k, M) for k in n])
    expo = pair.q / 2 if math.isfinite(pair.q) else 1.0
    sums = np.cumsum(rho**expo)
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.where(G > 0, rho / G**2, 0.0)
    return DecayReport(pair.p, pair.q, n, rho, G, g, sums, ratio)


# -- eigenfunctions ------------------------------------------------------------------

def eigenfunction(pair: PotentialPair, record: EigenRecord, x_grid) -> tuple[np.ndarray, np.ndarray]:
    """``y1 = d11 + d12``, ``y2 = d21 + d22`` at ``mu_n`` (so ``y1(0) = y2(0) = 1``)."""
    D = solve_direct(pair, record.mu, x=x_grid).values
    return D[:, 0, 0] + D[:, 0, 1], D[:, 1, 0] + D[:, 1, 1]


def _check_n(record: EigenRecord) -> None:
    if record.n == 0 or not np.isfinite(record.mu0):
        raise DomainError("asymptotic eigenfunctions need n != 0")


def asymptotic_eigenfunction_full(
    pair: PotentialPair, kernel: KernelBundle | KernelField, record: EigenRecord, M: int | None = None
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Expansion with ``F_j = -sigma_j + s~_j - T_{sigma_j} s~_k`` to first order in ``mu_{0,n}``.

    ``kernel`` supplies ``N = J~ + T~J~`` (a bundle or the field itself);
    returns ``(x, y1, y2)`` on the kernel grid (or its ``M`` subsample).
    """
    if pair.p <= 1.0:
        raise DomainError("the refined eigenfunction expansion needs p > 1")
    _check_n(record)
    N = kernel.terms[0] + kernel.terms[1] if isinstance(kernel, KernelBundle) else kernel
    rows, M = _subsample(N.grid.M, M)
    x = uniform_grid(M)
    w = math.pi * record.n
    m0 = record.mu0
    R = kernel_row_transforms(pair, w, x, 2).sum(axis=0)
    a1 = R[:, 0, 0] + R[:, 0, 1] - prefix_at(pair.sigma1, -2 * w, x)
    a2 = R[:, 1, 0] + R[:, 1, 1] - prefix_at(pair.sigma2, 2 * w, x)
    t = N.grid.x[None, :]
    tf1 = N.e11 + N.e12
    tf2 = N.e21 + N.e22
    b1 = row_transform(ScalarField(N.grid, tf1.values * t), -2 * w)[rows] - prefix_at(pair.sigma1, -2 * w, x, weight_t=True)
    b2 = row_transform(ScalarField(N.grid, tf2.values * t), 2 * w)[rows] - prefix_at(pair.sigma2, 2 * w, x, weight_t=True)
    y1 = np.exp(1j * w * x) * ((1 + 1j * m0 * x) * (1 + a1) - 2j * m0 * b1)
    y2 = np.exp(-1j * w * x) * ((1 - 1j * m0 * x) * (1 + a2) + 2j * m0 * b2)
    return x, y1, y2


def asymptotic_eigenfunction_short(pair: PotentialPair, record: EigenRecord, x_grid) -> tuple[np.ndarray, np.ndarray]:
    """Shorter expansion: Fourier windows and the double integral, interior frequency ``pi n``."""
    _check_n(record)
    x = np.atleast_1d(np.asarray(x_grid, float))
    w = math.pi * record.n
    m0 = record.mu0
    i1, i2 = diag_corrections(pair, w, x)
    p1 = prefix_at(pair.sigma1, -2 * w, x)
    p2 = prefix_at(pair.sigma2, 2 * w, x)
    y1 = np.exp(1j * w * x) * (1 + 1j * m0 * x - p1 + i1)
    y2 = np.exp(-1j * w * x) * (1 - 1j * m0 * x - p2 + i2)
    return y1, y2
