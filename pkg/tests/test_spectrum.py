import cmath
import math
from functools import lru_cache

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import integrate

from conftest import bundle, pair
from diracasym.errors import DomainError
from diracasym.kernel import build_N
from diracasym.numerics import winding_count
from diracasym.potential import Potential, make_pair
from diracasym.remainders import Gamma
from diracasym.solver import ode_residual, uniform_grid
from diracasym.spectrum import (
    EigenRecord,
    KernelCharFn,
    asymptotic_eigenfunction_full,
    asymptotic_eigenfunction_short,
    asymptotic_mu0,
    cell_box,
    char_direct,
    char_fn,
    constant_char,
    decay_report,
    eigenfunction,
    locate_eigenvalues,
    simplified_mu0,
)

C = 0.5
NS = [1, 2, 3, 4, 6, 8, 12, 16, 24, 32]


@lru_cache(maxsize=None)
def records(name, ns=tuple(NS)):
    return locate_eigenvalues(pair(name), list(ns), kernel=bundle(name, 256))


def fake_record(n, mu, mu0=0.0):
    return EigenRecord(n, complex(mu), complex(mu0), complex(mu0), 0j, 0.0, 0, 1)


def sweep(count=9):
    k = np.arange(count)
    return np.geomspace(0.5, 120, count) + 1j * 1.8 * np.sin(1.3 * k)


# -- characteristic function ---------------------------------------------------------

def test_char_zero_pair():
    mus = sweep()
    assert np.max(np.abs(char_direct(pair("zero"), mus) - 2j * np.sin(mus)) / np.cosh(1.8)) < 1e-10


def test_char_constant_pair():
    mus = sweep()
    got = char_direct(pair("const"), mus)
    assert np.max(np.abs(got - constant_char(C, mus))) < 1e-9 * np.cosh(1.8) * 120
    # direct series check of the closed form at a point where w is small
    assert constant_char(C, C) == pytest.approx(2j * C)
    assert constant_char(C, 0.0) == 0


@pytest.mark.parametrize("name", ["const", "trig", "power", "step"])
def test_char_methods_agree(name):
    mus = sweep()
    direct = char_fn(pair(name), mus)
    kern = char_fn(pair(name), mus, "kernel", bundle(name, 512))
    assert np.max(np.abs(direct - kern)) <= 1e-6


def test_char_scalar_and_errors():
    v = char_fn(pair("const"), 3.0)
    assert isinstance(v, complex)
    with pytest.raises(ValueError):
        char_fn(pair("const"), 3.0, "kernel")
    with pytest.raises(ValueError):
        char_fn(pair("const"), 3.0, "shooting")


def test_kernel_char_without_exact_leading():
    b = bundle("trig", 512)
    mus = sweep(5)
    rough = KernelCharFn(pair("trig"), b, exact_leading=False)(mus)
    fine = KernelCharFn(pair("trig"), b)(mus)
    assert np.max(np.abs(rough - fine)) < 1e-3


@settings(max_examples=10, deadline=None)
@given(st.floats(0.1, 60.0), st.floats(-2.0, 2.0))
def test_char_reflection_symmetry(re, im):
    # real sigma1 = sigma2: Phi(-conj mu) = conj Phi(mu), so zeros pair as mu, -conj mu
    st_ = Potential.indicator(0.1, 0.7, 0.8, p=1.0)
    pr = make_pair(st_, st_)
    mu = complex(re, im)
    a, b = char_direct(pr, [mu, -np.conj(mu)])
    assert abs(b - np.conj(a)) < 1e-9 * (1 + abs(a))


# -- leading terms ----------------------------------------------------------------------

def test_mu0_zero_pair():
    for n in (1, -3, 10):
        assert asymptotic_mu0(pair("zero"), n) == 0
        assert simplified_mu0(make_pair(Potential.zero(1.2), Potential.zero(1.2)), n) == 0


def test_mu0_constant_pair():
    for n in (1, 4, 9, 30):
        mu0 = asymptotic_mu0(pair("const"), n)
        assert mu0 == pytest.approx(C * C / (2 * math.pi * n), rel=1e-10)
        assert abs(asymptotic_mu0(pair("const"), n, "paper")) == pytest.approx(abs(mu0), rel=1e-10)
    with pytest.raises(DomainError):
        asymptotic_mu0(pair("const"), 0)
    with pytest.raises(ValueError):
        asymptotic_mu0(pair("const"), 1, "other")


def test_mu0_single_exponential():
    pr = make_pair(Potential.trig([(1, 1.0)], p=1.2), Potential.zero(1.2))
    # orthogonality: only the n = 1 Fourier coefficient is nonzero
    ref = integrate.quad(lambda t: math.cos(2 * math.pi * t) ** 2, 0, 1)[0] * 2
    assert ref == pytest.approx(1.0)
    assert asymptotic_mu0(pr, 1) == pytest.approx(1 / 2j, abs=1e-7)
    assert asymptotic_mu0(pr, 1, "paper") == pytest.approx(-1 / 2j, abs=1e-7)
    for n in (-1, 2, 5):
        assert abs(asymptotic_mu0(pr, n)) < 1e-7


def test_simplified_mu0():
    c12 = make_pair(Potential.constant(C, 1.2), Potential.constant(C, 1.2))
    for n in (1, 2, 7):
        assert abs(simplified_mu0(c12, n)) < 1e-14
    with pytest.raises(DomainError):
        simplified_mu0(pair("trig"), 1)  # p = 1.5
    with pytest.raises(DomainError):
        simplified_mu0(c12, 0)


def test_simplified_mu0_gap_is_double_integral():
    from diracasym.numerics import triangle_double_integral

    tr = make_pair(Potential.trig([(1, 1.0), (0, 0.3)], p=1.2), Potential.trig([(-2, 0.5)], p=1.2))
    for n in (1, 2, 3):
        gap = asymptotic_mu0(tr, n) - simplified_mu0(tr, n)
        w = 2 * math.pi * n
        assert gap == pytest.approx(1j * triangle_double_integral(tr.sigma1, tr.sigma2, -w, w), abs=1e-15)


# -- localization --------------------------------------------------------------------

def test_locate_zero_pair():
    recs = locate_eigenvalues(pair("zero"), (-8, 8), kernel=bundle("zero", 64))
    assert [r.n for r in recs] == list(range(-8, 9))
    for r in recs:
        assert r.accepted and r.box_winding == 1
        assert abs(r.mu - math.pi * r.n) < 1e-12


def test_locate_constant_pair():
    recs = locate_eigenvalues(pair("const"), (0, 32), kernel=bundle("const", 256))
    assert recs[0].n == 0 and abs(recs[0].mu) < 1e-10
    assert math.isnan(recs[0].rho.real)
    for r in recs[1:]:
        assert r.accepted
        assert abs(r.mu - math.sqrt(math.pi**2 * r.n**2 + C * C)) < 1e-8
        assert abs(r.mu.imag) <= 2.0
        assert r.phi_residual < 1e-7 * (1 + abs(r.mu))
        assert r.phi_kernel_residual < 1e-7 * (1 + abs(r.mu))


@pytest.mark.parametrize("name", ["trig", "power", "step"])
def test_locate_records_consistent(name):
    for r in records(name):
        assert r.accepted and r.box_winding == 1
        assert r.rho == pytest.approx(r.mu - math.pi * r.n - r.mu0, abs=1e-15)
        assert abs(char_direct(pair(name), [r.mu])[0]) < 1e-7 * (1 + abs(r.mu))


@pytest.mark.parametrize("name", ["trig", "step"])
def test_cell_winding_is_one(name):
    fn = KernelCharFn(pair(name), bundle(name, 256))
    for n in range(-6, 7):
        assert winding_count(fn, cell_box(n, 2.0)) == 1


def test_locate_rejects_empty_range():
    with pytest.raises(ValueError):
        locate_eigenvalues(pair("zero"), [], kernel=bundle("zero", 64))


def test_rho_decay_constant_pair():
    recs = locate_eigenvalues(pair("const"), (8, 32), kernel=bundle("const", 256))
    n = np.array([r.n for r in recs], float)
    rho = np.array([abs(r.rho) for r in recs])
    slope = np.polyfit(np.log(n), np.log(rho), 1)[0]
    assert slope == pytest.approx(-3, abs=0.3)


# -- decay report -------------------------------------------------------------------------

def test_decay_report_zero_pair():
    recs = locate_eigenvalues(pair("zero"), (1, 32), kernel=bundle("zero", 64))
    rep = decay_report(recs, pair("zero"), M=128)
    assert rep.n.size == rep.rho_abs.size == rep.partial_sums.size == 32
    # rho_n is integrator roundoff here
    assert np.max(rep.rho_abs) < 1e-10 and np.max(rep.partial_sums) < 32 * 1e-15
    assert rep.sup_ratio == 0


def test_decay_report_constant_pair():
    recs = locate_eigenvalues(pair("const"), (1, 32), kernel=bundle("const", 256))
    rep = decay_report(recs, pair("const"), M=128)
    assert np.all(np.diff(rep.partial_sums) >= 0)
    inc = rep.block_increments()
    assert np.all(inc[1:] < inc[:-1] / 4)


def test_decay_report_step_pair():
    recs = locate_eigenvalues(pair("step"), (8, 64), kernel=bundle("step", 256))
    rep = decay_report(recs, pair("step"), M=256)
    assert rep.sup_ratio < 0.05
    # |rho_n| / Gamma^2 settles to a 4-periodic profile in n
    r = rep.ratio
    for k in range(4):
        tail = r[k::4][-4:]
        assert tail.max() / tail.min() < 1.01
    assert np.array_equal(rep.gamma_pin, rep.Gamma_pin)


# -- eigenfunctions ------------------------------------------------------------------

def test_eigenfunction_zero_pair():
    x = uniform_grid(64)
    y1, y2 = eigenfunction(pair("zero"), fake_record(1, math.pi), x)
    assert np.max(np.abs(y1 - np.exp(1j * math.pi * x))) < 1e-10
    assert np.max(np.abs(y2 - np.exp(-1j * math.pi * x))) < 1e-10
    assert y1[-1] == pytest.approx(-1, abs=1e-10) and y2[-1] == pytest.approx(-1, abs=1e-10)


@pytest.mark.parametrize("name", ["const", "trig", "power", "step"])
def test_eigenfunction_boundary_residual(name):
    x = uniform_grid(64)
    for r in records(name):
        y1, y2 = eigenfunction(pair(name), r, x)
        assert y1[0] == y2[0] == 1
        assert abs(y1[-1] - y2[-1]) <= 1e-8


def test_eigenfunction_ode_residual_constant():
    r = records("const")[3]
    assert np.nanmax(ode_residual(pair("const"), r.mu, [0.2, 0.5, 0.8])) <= 1e-6


def test_asymptotic_forms_zero_pair():
    x = uniform_grid(64)
    for n in (1, 3, -2):
        rec = fake_record(n, math.pi * n)
        y1, y2 = asymptotic_eigenfunction_short(pair("zero"), rec, x)
        assert np.array_equal(y1, np.exp(1j * math.pi * n * x))
        assert np.array_equal(y2, np.exp(-1j * math.pi * n * x))
        z = make_pair(Potential.zero(1.5), Potential.zero(1.5))
        xf, f1, f2 = asymptotic_eigenfunction_full(z, bundle("zero", 64), rec)
        assert np.max(np.abs(f1 - np.exp(1j * math.pi * n * xf))) < 1e-15
        assert np.max(np.abs(f2 - np.exp(-1j * math.pi * n * xf))) < 1e-15


def test_full_form_with_one_potential():
    # with sigma2 = 0 the tilde fields and T-terms vanish, so F_1 = -sigma1
    from diracasym.kernel import TriangleGrid
    from diracasym.numerics import prefix_at

    s1 = Potential.trig([(1, 1.0), (0, 0.3)], p=1.5)
    pr = make_pair(s1, Potential.zero(1.5))
    N = build_N(pr, TriangleGrid(64))
    assert N.max_abs() == 0
    n, m0 = 3, 0.01 + 0.02j
    rec = fake_record(n, math.pi * n, m0)
    x, y1, y2 = asymptotic_eigenfunction_full(pr, N, rec)
    w = math.pi * n
    P = prefix_at(s1, -2 * w, x)
    Pt = prefix_at(s1, -2 * w, x, weight_t=True)
    ref = np.exp(1j * w * x) * ((1 + 1j * m0 * x) * (1 - P) + 2j * m0 * Pt)
    assert np.max(np.abs(y1 - ref)) < 1e-13
    assert np.max(np.abs(y2 - np.exp(-1j * w * x) * (1 - 1j * m0 * x))) < 1e-13


def test_full_form_needs_p_above_one():
    rec = fake_record(2, 2 * math.pi)
    with pytest.raises(DomainError):
        asymptotic_eigenfunction_full(pair("step"), bundle("step", 64), rec)
    with pytest.raises(DomainError):
        asymptotic_eigenfunction_full(pair("trig"), bundle("trig", 64), fake_record(0, 0.0))
    with pytest.raises(DomainError):
        asymptotic_eigenfunction_short(pair("trig"), fake_record(0, 0.0), [0.5])


def _errors(name):
    pr, b = pair(name), bundle(name, 256)
    x = uniform_grid(256)
    full, short = [], []
    for r in records(name):
        y1, y2 = eigenfunction(pr, r, x)
        s1, s2 = asymptotic_eigenfunction_short(pr, r, x)
        short.append(max(np.max(np.abs(y1 - s1)), np.max(np.abs(y2 - s2))))
        if pr.p > 1:
            _, f1, f2 = asymptotic_eigenfunction_full(pr, b, r)
            full.append(max(np.max(np.abs(y1 - f1)), np.max(np.abs(y2 - f2))))
    return np.array(full), np.array(short)


@pytest.mark.parametrize("name,drop", [("const", 100), ("trig", 100), ("power", 20)])
def test_asymptotic_errors_decay(name, drop):
    full, short = _errors(name)
    for e in (full, short):
        assert np.all(np.diff(e) < 0)
        assert e[-1] < e[0] / drop
    # the shorter form drops terms that vanish with n
    assert np.max(np.abs(full - short)[-3:]) < np.max(np.abs(full - short)[:3])


def test_short_form_step_pair_scales_with_Gamma():
    _, short = _errors("step")
    G = np.array([Gamma(pair("step"), math.pi * n, 256) for n in NS])
    ratio = short / G**2
    assert np.max(ratio) < 0.1
    # fitted constant is stable over the tail
    tail = ratio[-4:]
    assert tail.max() / tail.min() < 1.1
