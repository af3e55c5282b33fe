"""Piecewise-polynomial potentials on [0, 1].

Every potential is stored as an ordered list of segments ``[a_k, a_{k+1}]``
with complex polynomial coefficients in the *local* variable ``t - a_k``
(degree at most 3).  Model families (constants, steps, trigonometric
polynomials, power singularities) are compiled to this form, so all
downstream integrals can be done segment by segment in closed form.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Callable, Iterable, Sequence

import numpy as np
from scipy import integrate

from .errors import ConfigError, DomainError

MAX_DEGREE = 3
_QUAD_RTOL = 1e-10


def taylor_shift(coeffs: np.ndarray, delta: np.ndarray) -> np.ndarray:
    """Re-expand ``sum c_k u^k`` around ``u = delta``.

    ``coeffs`` has shape ``(P, D+1)`` and ``delta`` shape ``(P,)``; returns
    the coefficients of the same polynomials in the variable ``u - delta``.
    """
    coeffs = np.asarray(coeffs, dtype=complex)
    delta = np.asarray(delta, dtype=float)
    deg = coeffs.shape[1] - 1
    out = np.zeros_like(coeffs)
    for m in range(deg + 1):
        acc = np.zeros(coeffs.shape[0], dtype=complex)
        for k in range(m, deg + 1):
            acc += math.comb(k, m) * coeffs[:, k] * delta ** (k - m)
        out[:, m] = acc
    return out


def poly_eval(coeffs: np.ndarray, u: np.ndarray) -> np.ndarray:
    """Horner evaluation of rows of ``coeffs`` at matching ``u``."""
    val = np.zeros(np.shape(u), dtype=complex)
    for k in range(coeffs.shape[-1] - 1, -1, -1):
        val = val * u + coeffs[..., k]
    return val


@dataclass(frozen=True, eq=False)
class Potential:
    """Complex piecewise polynomial on [0, 1], right-continuous at breakpoints.

    ``coeffs[k, m]`` multiplies ``(t - breaks[k])**m`` on segment ``k``.
    ``p`` tags the integrability class the function stands for.
    """

    breaks: np.ndarray
    coeffs: np.ndarray
    p: float = 1.0

    def __post_init__(self) -> None:
        breaks = np.asarray(self.breaks, dtype=float)
        coeffs = np.asarray(self.coeffs, dtype=complex)
        if coeffs.ndim == 1:
            coeffs = coeffs[:, None]
        if coeffs.shape[1] < MAX_DEGREE + 1:
            pad = np.zeros((coeffs.shape[0], MAX_DEGREE + 1 - coeffs.shape[1]), complex)
            coeffs = np.hstack([coeffs, pad])
        if coeffs.shape[1] > MAX_DEGREE + 1:
            if np.any(coeffs[:, MAX_DEGREE + 1:] != 0):
                raise ConfigError("segment polynomials must have degree <= 3")
            coeffs = coeffs[:, : MAX_DEGREE + 1]
        if breaks.ndim != 1 or breaks.size != coeffs.shape[0] + 1:
            raise ConfigError("need exactly one more breakpoint than segments")
        if breaks[0] != 0.0 or breaks[-1] != 1.0:
            raise ConfigError("breakpoints must start at 0 and end at 1")
        if np.any(np.diff(breaks) <= 0):
            raise ConfigError("breakpoints must be strictly increasing")
        if not np.all(np.isfinite(coeffs)):
            raise ConfigError("segment coefficients must be finite")
        if not 1.0 <= self.p < 2.0:
            raise ConfigError(f"integrability exponent p={self.p} not in [1, 2)")
        breaks.setflags(write=False)
        coeffs.setflags(write=False)
        object.__setattr__(self, "breaks", breaks)
        object.__setattr__(self, "coeffs", coeffs)

    # -- construction -----------------------------------------------------

    @classmethod
    def zero(cls, p: float = 1.0) -> "Potential":
        return cls.constant(0.0, p)

    @classmethod
    def constant(cls, value: complex, p: float = 1.0) -> "Potential":
        return cls(np.array([0.0, 1.0]), np.array([[value, 0, 0, 0]]), p)

    @classmethod
    def polynomial(cls, coeffs: Sequence[complex], p: float = 1.0) -> "Potential":
        """Single segment ``sum coeffs[k] t^k`` on [0, 1]."""
        return cls(np.array([0.0, 1.0]), np.array([list(coeffs)], dtype=complex), p)

    @classmethod
    def step(cls, pieces: Iterable[tuple[float, float, complex]], p: float = 1.0) -> "Potential":
        """Piecewise constant function; ``pieces`` are ``(a, b, value)``, zero elsewhere."""
        pieces = [(float(a), float(b), complex(v)) for a, b, v in pieces]
        pts = sorted({0.0, 1.0, *(a for a, _, _ in pieces), *(b for _, b, _ in pieces)})
        pts = np.array(pts)
        if pts[0] < 0 or pts[-1] > 1:
            raise ConfigError("step pieces must lie inside [0, 1]")
        mids = 0.5 * (pts[:-1] + pts[1:])
        vals = np.zeros(mids.size, dtype=complex)
        for a, b, v in pieces:
            vals[(mids >= a) & (mids < b)] += v
        return cls(pts, vals[:, None], p)

    @classmethod
    def indicator(cls, a: float, b: float, scale: complex = 1.0, p: float = 1.0) -> "Potential":
        return cls.step([(a, b, scale)], p)

    @classmethod
    def trig(
        cls,
        terms: Iterable[tuple[int, complex]],
        segments: int = 128,
        p: float = 1.0,
    ) -> "Potential":
        """Cubic Hermite interpolant of ``sum_k c_k exp(2 pi i k t)`` on a uniform mesh."""
        terms = [(int(k), complex(c)) for k, c in terms]

        def f(t):
            return sum(c * np.exp(2j * np.pi * k * t) for k, c in terms) + 0 * t

        def df(t):
            return sum(2j * np.pi * k * c * np.exp(2j * np.pi * k * t) for k, c in terms) + 0 * t

        x = np.linspace(0.0, 1.0, segments + 1)
        return cls(x, _hermite_coeffs(x, f(x), df(x)), p)

    @classmethod
    def power(
        cls,
        alpha: float,
        scale: complex = 1.0,
        segments: int = 256,
        p: float = 1.0,
    ) -> "Potential":
        """Graded-mesh approximant of ``scale * t**(-alpha)``.

        Knots ``t_k = (k/K)**(1/(1-alpha))``; linear interpolation on every
        segment except the first, which carries the exact cell average.
        """
        if not 0.0 <= alpha < 1.0:
            raise ConfigError("power family needs 0 <= alpha < 1")
        if alpha * p >= 1.0:
            raise ConfigError(f"t^-{alpha} is not in L_{p}")
        K = int(segments)
        x = (np.arange(K + 1) / K) ** (1.0 / (1.0 - alpha))
        x[0], x[-1] = 0.0, 1.0
        coeffs = np.zeros((K, 2), dtype=complex)
        coeffs[0, 0] = x[1] ** (-alpha) / (1.0 - alpha)
        left, right = x[1:-1] ** (-alpha), x[2:] ** (-alpha)
        coeffs[1:, 0] = left
        coeffs[1:, 1] = (right - left) / np.diff(x[1:])
        return cls(x, scale * coeffs, p)

    @classmethod
    def from_segments(
        cls, segments: Sequence[tuple[float, float, Sequence[float], Sequence[float]]], p: float = 1.0
    ) -> "Potential":
        """Explicit list of ``(a, b, coeffs_re, coeffs_im)`` in local variable ``t - a``."""
        segs = sorted(segments, key=lambda s: s[0])
        breaks = [segs[0][0]]
        rows = []
        for a, b, re, im in segs:
            if not math.isclose(a, breaks[-1], abs_tol=1e-15):
                raise ConfigError("explicit segments must tile [0, 1] without gaps")
            breaks.append(b)
            re = list(re) + [0.0] * (4 - len(re))
            im = list(im) + [0.0] * (4 - len(im))
            rows.append(np.array(re, float) + 1j * np.array(im, float))
        return cls(np.array(breaks), np.array(rows), p)

    # -- evaluation ----------------------------------------------------------

    @property
    def n_segments(self) -> int:
        return self.coeffs.shape[0]

    def segment_index(self, x: np.ndarray) -> np.ndarray:
        idx = np.searchsorted(self.breaks, x, side="right") - 1
        return np.clip(idx, 0, self.n_segments - 1)

    def __call__(self, x):
        x_arr = np.asarray(x, dtype=float)
        if np.any((x_arr < 0.0) | (x_arr > 1.0)):
            raise DomainError("potential evaluated outside [0, 1]")
        idx = self.segment_index(x_arr)
        val = poly_eval(self.coeffs[idx], x_arr - self.breaks[idx])
        return val if np.ndim(x) else complex(val)

    def pieces(self, points: np.ndarray) -> np.ndarray:
        """Coefficients re-expanded on the sub-segments ``[points[k], points[k+1]]``.

        ``points`` must be sorted and contain every breakpoint of ``self``
        lying inside its range.
        """
        points = np.asarray(points, dtype=float)
        left = points[:-1]
        idx = self.segment_index(left)
        return taylor_shift(self.coeffs[idx], left - self.breaks[idx])

    def is_zero(self) -> bool:
        return not np.any(self.coeffs)

    # -- algebra -----------------------------------------------------------

    def scaled(self, alpha: complex) -> "Potential":
        return replace(self, coeffs=alpha * self.coeffs)

    def conj(self) -> "Potential":
        return replace(self, coeffs=np.conj(self.coeffs))

    def __add__(self, other: "Potential") -> "Potential":
        pts = merge_breaks(self, other)
        return Potential(pts, self.pieces(pts) + other.pieces(pts), self.p)

    def __sub__(self, other: "Potential") -> "Potential":
        return self + other.scaled(-1.0)

    # -- norms ---------------------------------------------------------------

    def lp_norm(self, s: float) -> float:
        return lp_norm(self, s)


def _hermite_coeffs(x, f, df) -> np.ndarray:
    h = np.diff(x)
    f0, f1, d0, d1 = f[:-1], f[1:], df[:-1], df[1:]
    slope = (f1 - f0) / h
    c2 = (3 * slope - 2 * d0 - d1) / h
    c3 = (d0 + d1 - 2 * slope) / h**2
    return np.stack([f0, d0, c2, c3], axis=1)


def merge_breaks(*pots: Potential, extra: Iterable[float] | np.ndarray = ()) -> np.ndarray:
    """Sorted union of breakpoints of ``pots`` and ``extra`` (within [0, 1])."""
    arrays = [pot.breaks for pot in pots] + [np.asarray(extra, dtype=float).ravel()]
    pts = np.unique(np.concatenate(arrays + [np.array([0.0, 1.0])]))
    return pts[(pts >= 0.0) & (pts <= 1.0)]


def lp_norm(pot: Potential, s: float) -> float:
    """``(int_0^1 |pot|^s)^(1/s)`` by adaptive quadrature per segment."""
    if s < 1:
        raise DomainError("L_s norm needs s >= 1")
    total = 0.0
    for k in range(pot.n_segments):
        c = pot.coeffs[k]
        if not np.any(c):
            continue
        h = pot.breaks[k + 1] - pot.breaks[k]
        if not np.any(c[1:]):
            total += abs(c[0]) ** s * h
            continue
        val, _ = integrate.quad(
            lambda u: abs(c[0] + u * (c[1] + u * (c[2] + u * c[3]))) ** s,
            0.0, h, epsabs=0.0, epsrel=_QUAD_RTOL, limit=200,
        )
        total += val
    return total ** (1.0 / s)


def power_approximation_error(pot: Potential, alpha: float, scale: float, s: float) -> float:
    """L_s distance between a graded approximant and ``scale * t**(-alpha)``."""
    total = 0.0
    for k in range(pot.n_segments):
        a, b = pot.breaks[k], pot.breaks[k + 1]
        c = pot.coeffs[k]

        def diff(t, a=a, c=c):
            u = t - a
            return abs(c[0] + u * (c[1] + u * (c[2] + u * c[3])) - scale * t ** (-alpha)) ** s

        # first cell holds the integrable singularity at t = 0
        rtol = 1e-8 if k == 0 else _QUAD_RTOL
        val, _ = integrate.quad(diff, a, b, epsrel=rtol, limit=400)
        total += val
    return total ** (1.0 / s)


@dataclass(frozen=True)
class Constants:
    """Norm constants of a potential pair (L_1-based and L_p-based triples)."""

    a0: float
    a: float
    a1: float
    a0_tilde: float
    a_tilde: float
    a2: float
    l1_norms: tuple[float, float]
    lp_norms: tuple[float, float]


@dataclass(frozen=True, eq=False)
class PotentialPair:
    """The two entries ``sigma1``, ``sigma2`` of the off-diagonal potential matrix."""

    sigma1: Potential
    sigma2: Potential
    constants: Constants | None = field(default=None)

    def __post_init__(self) -> None:
        if self.sigma1.p != self.sigma2.p:
            raise ConfigError("sigma1 and sigma2 must share the exponent p")

    @property
    def p(self) -> float:
        return self.sigma1.p

    @property
    def q(self) -> float:
        """Conjugate exponent; ``inf`` for ``p = 1``."""
        return math.inf if self.p == 1.0 else self.p / (self.p - 1.0)

    @property
    def r(self) -> float:
        """Exponent of the B-space norm: 1 for p = 1, else 2/(2-p)."""
        return 1.0 if self.p == 1.0 else 2.0 / (2.0 - self.p)

    @property
    def c(self) -> Constants:
        if self.constants is None:
            return derive_constants(self).constants
        return self.constants

    def sigma0(self, x) -> np.ndarray:
        """``|sigma1(x)| + |sigma2(x)|``."""
        return np.abs(self.sigma1(x)) + np.abs(self.sigma2(x))

    def breaks(self, extra=()) -> np.ndarray:
        return merge_breaks(self.sigma1, self.sigma2, extra=extra)

    def is_zero(self) -> bool:
        return self.sigma1.is_zero() and self.sigma2.is_zero()


def derive_constants(pair: PotentialPair) -> PotentialPair:
    """Return ``pair`` with its norm constants populated (idempotent)."""
    if pair.constants is not None:
        return pair
    l1 = (lp_norm(pair.sigma1, 1.0), lp_norm(pair.sigma2, 1.0))
    lp = (lp_norm(pair.sigma1, pair.p), lp_norm(pair.sigma2, pair.p))
    const = Constants(
        a0=max(l1), a=l1[0] * l1[1], a1=l1[0] + l1[1],
        a0_tilde=max(lp), a_tilde=lp[0] * lp[1], a2=lp[0] + lp[1],
        l1_norms=l1, lp_norms=lp,
    )
    return replace(pair, constants=const)


def make_pair(sigma1: Potential, sigma2: Potential) -> PotentialPair:
    return derive_constants(PotentialPair(sigma1, sigma2))


def from_bq_form(q1: Potential, q2: Potential) -> PotentialPair:
    """Pair for the system ``B Z' + Q Z = mu Z`` after the substitution ``Z = U Y``.

    ``sigma1 = q1 + i q2`` and ``sigma2 = q1 - i q2``.
    """
    if q1.p != q2.p:
        raise ConfigError("q1 and q2 must share the exponent p")
    return make_pair(q1 + q2.scaled(1j), q1 - q2.scaled(1j))


def to_bq_form(pair: PotentialPair) -> tuple[Potential, Potential]:
    """Inverse of :func:`from_bq_form`."""
    s1, s2 = pair.sigma1, pair.sigma2
    return (s1 + s2).scaled(0.5), (s1 - s2).scaled(-0.5j)


FAMILIES: dict[str, Callable[..., Potential]] = {}


def _family(name):
    def deco(fn):
        FAMILIES[name] = fn
        return fn
    return deco


@_family("zero")
def _zero(p, **_):
    return Potential.zero(p)


@_family("constant")
def _const(p, value=0.0, value_im=0.0):
    return Potential.constant(complex(value, value_im), p)


@_family("step")
def _step(p, pieces):
    return Potential.step([(a, b, complex(*v) if isinstance(v, (list, tuple)) else v)
                           for a, b, v in pieces], p)


@_family("indicator")
def _indicator(p, a, b, scale=1.0):
    return Potential.indicator(a, b, scale, p)


@_family("trig")
def _trig(p, terms, segments=128):
    return Potential.trig([(k, complex(re, im)) for k, re, im in terms], segments, p)


@_family("power")
def _power(p, alpha, scale=1.0, segments=256):
    return Potential.power(alpha, scale, segments, p)


@_family("polynomial")
def _polynomial(p, coeffs_re, coeffs_im=()):
    im = list(coeffs_im) + [0.0] * (len(coeffs_re) - len(coeffs_im))
    return Potential.polynomial([complex(a, b) for a, b in zip(coeffs_re, im)], p)


@_family("segments")
def _segments(p, segments):
    return Potential.from_segments(segments, p)


def build_potential(spec: dict, p: float) -> Potential:
    """Compile a config fragment ``{"family": name, **params}`` to a Potential."""
    spec = dict(spec)
    name = spec.pop("family", None)
    if name not in FAMILIES:
        raise ConfigError(f"unknown potential family {name!r}; known: {sorted(FAMILIES)}")
    try:
        return FAMILIES[name](p, **spec)
    except TypeError as exc:
        raise ConfigError(f"bad parameters for family {name!r}: {exc}") from exc
