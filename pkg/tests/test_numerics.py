import cmath
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import integrate

from diracasym.errors import BoundaryZeroError
from diracasym.numerics import (
    CellQuadrature,
    SearchBox,
    dyadic_blocks,
    filon_line_weights,
    nested_prefix,
    osc_moments,
    osc_segment_integral,
    prefix_at,
    prefix_transform,
    root_polish,
    secant_batch,
    total_transform,
    triangle_double_integral,
    winding_count,
)
from diracasym.potential import Potential

pytestmark = pytest.mark.filterwarnings("ignore::scipy.integrate.IntegrationWarning")


def quad_c(f, a, b, **kw):
    re = integrate.quad(lambda t: f(t).real, a, b, epsabs=1e-14, epsrel=1e-13, limit=400, **kw)[0]
    im = integrate.quad(lambda t: f(t).imag, a, b, epsabs=1e-14, epsrel=1e-13, limit=400, **kw)[0]
    return re + 1j * im


def sin_phi(z):
    return 2j * np.sin(z)


# -- oscillatory integrals -----------------------------------------------------

def test_segment_integral_examples():
    assert osc_segment_integral([1], 0, 1, 0) == pytest.approx(1, abs=1e-15)
    assert abs(osc_segment_integral([1], 0, 1, 2 * np.pi)) < 1e-15
    assert osc_segment_integral([0, 1], 0, 1, 2 * np.pi) == pytest.approx(-1j / (2 * np.pi), abs=1e-15)


cubic = st.lists(st.complex_numbers(max_magnitude=3, allow_nan=False, allow_infinity=False), min_size=4, max_size=4)


@settings(max_examples=60, deadline=None)
@given(cubic, st.floats(0, 0.9), st.floats(0.01, 0.5),
       st.floats(-80, 80), st.floats(-4, 4))
def test_segment_integral_matches_quadrature(c, a, h, wr, wi):
    b = min(a + h, 1.0)
    w = complex(wr, wi)
    got = osc_segment_integral(c, a, b, w)
    ref = quad_c(lambda t: (c[0] + c[1] * (t - a) + c[2] * (t - a) ** 2 + c[3] * (t - a) ** 3) * cmath.exp(1j * w * t), a, b)
    assert abs(got - ref) <= 1e-11 * (1 + abs(ref))


@settings(max_examples=40, deadline=None)
@given(st.complex_numbers(max_magnitude=50, allow_nan=False, allow_infinity=False))
def test_moments_switchover_consistent(z):
    # both branches agree near the switch radius and with the integral definition
    got = osc_moments(np.array([z]), 3)[0]
    for k in range(4):
        ref = quad_c(lambda u: u**k * cmath.exp(1j * z * u), 0, 1)
        assert abs(got[k] - ref) <= 1e-12 * (1 + abs(ref))


def test_small_omega_no_cancellation():
    for w in (1e-9, 1e-5, 1e-3, 0.5):
        got = osc_segment_integral([0, 0, 0, 1], 0, 1, w)
        ref = quad_c(lambda t: t**3 * cmath.exp(1j * w * t), 0, 1)
        assert abs(got - ref) < 1e-15


@settings(max_examples=30, deadline=None)
@given(cubic, st.floats(0.1, 60))
def test_plus_minus_omega_cosine(c, w):
    c = [x.real for x in c]
    s = osc_segment_integral(c, 0, 1, w) + osc_segment_integral(c, 0, 1, -w)
    ref = 2 * integrate.quad(lambda t: np.polyval(c[::-1], t) * math.cos(w * t), 0, 1, limit=400, epsabs=1e-14)[0]
    assert abs(s - ref) < 1e-12


# -- prefix transforms -----------------------------------------------------------

def test_prefix_examples():
    tr = prefix_transform(Potential.zero(), -3.0, 16)
    assert np.all(tr.values == 0)
    mu = 2.3 + 0.4j
    tr = prefix_transform(Potential.constant(1.0), -2 * mu, 32)
    exact = (1 - np.exp(-2j * mu * tr.x)) / (2j * mu)
    assert np.max(np.abs(tr.values - exact)) < 1e-15
    assert tr.values[0] == 0
    t = Potential.polynomial([0, 1])
    val = prefix_at(t, -2 * np.pi, [1.0])[0]
    assert abs(val - quad_c(lambda s: s * cmath.exp(-2j * np.pi * s), 0, 1)) < 1e-12
    assert val == pytest.approx(np.conj(osc_segment_integral([0, 1], 0, 1, 2 * np.pi)), abs=1e-15)


def test_prefix_telescopes_and_unsorted():
    pot = Potential.power(0.4, 1.0, segments=32)
    pts = np.array([0.9, 0.1, 0.5, 0.3])
    vals = prefix_at(pot, 7.0 - 1j, pts)
    for x, v in zip(pts, vals):
        assert v == pytest.approx(prefix_at(pot, 7.0 - 1j, [x])[0], abs=1e-15)
    full = prefix_at(pot, 7.0 - 1j, [1.0])[0]
    assert full == pytest.approx(total_transform(pot, [7.0 - 1j])[0], abs=1e-14)


def test_prefix_linear_and_conjugate_equivariant():
    a = Potential.trig([(1, 1 + 0.5j)], segments=16)
    b = Potential.step([(0.2, 0.7, 2 - 1j)])
    w = 5.0 + 0.7j
    x = np.linspace(0, 1, 9)
    lin = prefix_at(a + b.scaled(0.3j), w, x)
    assert np.max(np.abs(lin - prefix_at(a, w, x) - 0.3j * prefix_at(b, w, x))) < 1e-14
    conj = prefix_at(a.conj(), np.conj(-w), x)
    assert np.max(np.abs(conj - np.conj(prefix_at(a, w, x)))) < 1e-14


def test_weighted_prefix():
    pot = Potential.polynomial([1, 2, 0, -1])
    got = prefix_at(pot, 9.0, [0.6], weight_t=True)[0]
    ref = quad_c(lambda t: t * pot(t) * cmath.exp(9j * t), 0, 0.6)
    assert abs(got - ref) < 1e-13


# -- cells and nested integrals ------------------------------------------------

def test_cell_quadrature_resolves_oscillation():
    cq = CellQuadrature.build([0.3], omega_max=200.0)
    assert np.all(cq.h <= 1.5 / 200 + 1e-15)
    vals = np.exp(200j * cq.nodes)
    total = cq.edge_prefix(vals)[-1]
    assert abs(total - (np.exp(200j) - 1) / 200j) < 1e-13
    assert cq.at(cq.edge_prefix(np.ones_like(cq.nodes)), [0.3])[0] == pytest.approx(0.3)
    with pytest.raises(ValueError):
        cq.at(cq.edge_prefix(vals), [0.123456])


def test_triangle_double_examples():
    z = Potential.zero()
    assert triangle_double_integral(z, z, 1.0, 2.0) == 0
    one = Potential.constant(1.0)
    assert triangle_double_integral(one, one, 0, 0) == pytest.approx(0.5, abs=1e-15)
    c = 0.7
    cp = Potential.constant(c)
    for n in (1, 3, 10):
        got = triangle_double_integral(cp, cp, -2 * np.pi * n, 2 * np.pi * n)
        assert got == pytest.approx(c * c / (2j * np.pi * n), abs=1e-13)


def test_triangle_double_vs_dblquad():
    f = Potential.trig([(1, 1.0), (0, 0.3)], segments=32)
    g = Potential.step([(0.25, 1.0, 0.7)])
    wo, wi = -6.0 + 0.3j, 6.0
    got = triangle_double_integral(f, g, wo, wi)

    def inner(t):
        return quad_c(lambda s: g(s) * cmath.exp(1j * wi * s), 0, t, points=[0.25] if t > 0.25 else None)

    ref = quad_c(lambda t: f(t) * cmath.exp(1j * wo * t) * inner(t), 0, 1)
    assert abs(got - ref) < 1e-9


def test_nested_prefix_depth_one_matches_prefix():
    pot = Potential.power(0.4, 1.0, segments=64)
    x = np.array([0.2, 0.5, 1.0])
    assert np.max(np.abs(nested_prefix([(pot, -12.0)], x) - prefix_at(pot, -12.0, x))) < 1e-10


def test_filon_line_weights_polynomial_exact():
    M = 40
    w = np.array([0.0, 17.0, -60.0 + 1j])
    W = filon_line_weights(M, w)
    t = np.arange(M + 1) / M
    v = 1 + 2 * t - t**3
    for k, om in enumerate(w):
        ref = quad_c(lambda s: (1 + 2 * s - s**3) * cmath.exp(1j * om * s), 0, 1)
        assert abs(W[k] @ v - ref) < 1e-13


# -- zero counting and polishing -----------------------------------------------

def test_winding_examples():
    assert winding_count(sin_phi, SearchBox(np.pi, 1.0, 1.0)) == 1
    assert winding_count(sin_phi, SearchBox(np.pi / 2, 0.5, 0.5)) == 0
    c = 0.5

    def const_phi(mu):
        w = np.sqrt(mu**2 - c**2 + 0j)
        return 2j * mu * np.sin(w) / w

    assert winding_count(const_phi, SearchBox(3 * np.pi, 0.45, 4.0)) == 1


def test_winding_multiplicity_and_refinement():
    box = SearchBox(0.3, 1.0, 1.0)
    assert winding_count(lambda z: (z - 0.1) ** 2 * (z + 0.2j), box) == 3
    # coarse or dense initial sampling converges to the same count
    assert winding_count(sin_phi, SearchBox(np.pi, 1.0, 3.0, samples=4)) == winding_count(
        sin_phi, SearchBox(np.pi, 1.0, 3.0, samples=256))


def test_winding_boundary_zero():
    with pytest.raises(BoundaryZeroError):
        winding_count(sin_phi, SearchBox(np.pi + 1.0, 1.0, 1.0, samples=8))


def test_root_polish_examples():
    box = SearchBox(np.pi, 0.45, 1.0)
    assert abs(root_polish(sin_phi, 3.0, 1e-13, box) - np.pi) < 1e-12
    lin_box = SearchBox(1 + 1j, 1.0, 1.0)
    assert abs(root_polish(lambda z: z - (1 + 1j), 1.0, 1e-13, lin_box) - (1 + 1j)) < 1e-13
    c, n = 0.5, 4

    def const_phi(mu):
        w = np.sqrt(mu**2 - c**2 + 0j)
        return 2j * mu * np.sin(w) / w

    root = root_polish(const_phi, n * np.pi, 1e-12, SearchBox(n * np.pi, 0.45, 4.0))
    assert abs(root - math.sqrt(np.pi**2 * n**2 + c**2)) < 1e-11


def test_root_polish_falls_back_to_subdivision():
    # a flat start region sends the plain secant out of the box
    phi = lambda z: np.tanh(8 * (z - 0.37))  # noqa: E731
    box = SearchBox(0.0, 1.0, 0.1)
    res = root_polish(phi, -0.95, 1e-12, box, full_output=True)
    assert abs(res.root - 0.37) < 1e-10
    assert box.contains(res.root)


def test_secant_batch():
    starts = np.pi * np.arange(1, 6) + 0.2
    roots, iters, ok = secant_batch(sin_phi, starts, 1e-13)
    assert ok.all()
    assert np.max(np.abs(roots - np.pi * np.arange(1, 6))) < 1e-12
    _, _, ok = secant_batch(lambda z: np.ones_like(z), np.array([1.0 + 0j]), 1e-12)
    assert not ok[0]


def test_dyadic_blocks():
    ns = np.arange(1, 33)
    blocks = dyadic_blocks(ns)
    assert [int(b.sum()) for b in blocks] == [1, 2, 4, 8, 17]
    assert np.all(sum(b.astype(int) for b in blocks) == 1)
