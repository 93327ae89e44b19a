import math

import numpy as np
import pytest

from ferrophase.materials import (Params, cubic_split, h0, h0_dphi, is_saturated,
                                  lemma41_gap, nu, psi, psi0, psi0_prime,
                                  psi0_second, rho, xi, xi_prime)


@pytest.fixture
def blend_params():
    # reference blend used by the worked examples
    return Params(xi1=1.0, xi2=2.0, eta_blend=0.1, nu1=1.0, nu2=10.0)


def test_params_validation():
    with pytest.raises(ValueError):
        Params(alpha=-1.0)
    with pytest.raises(ValueError):
        Params(eta=0.0)
    with pytest.raises(ValueError):
        Params(a=1.0, b=3.0, kappa=1.0)   # kappa < b - a
    p = Params()
    assert p.kappa == p.b
    assert p.c1 == min(p.xi1, p.xi2) and p.c2 == max(p.xi1, p.xi2)


def test_xi_midpoint_and_value(blend_params):
    p = blend_params
    assert abs(xi(0.0, p) - 1.5) < 1e-14
    # logistic blend at phi = 0.5: 1 + 1/(1 + e^-5)
    expected = 1.0 + 1.0 / (1.0 + math.exp(-5.0))
    assert abs(xi(0.5, p) - expected) < 1e-12
    assert abs(xi(0.5, p) - 1.993307) < 1e-6


def test_xi_degenerate_blend():
    p = Params(xi1=1.3, xi2=1.3)
    phis = np.linspace(-5, 5, 11)
    assert np.allclose(xi(phis, p), 1.3)
    assert np.allclose(xi_prime(phis, p), 0.0)


def test_xi_bounds_and_derivative_bound(blend_params):
    p = blend_params
    phis = np.linspace(-10, 10, 2001)
    vals = xi(phis, p)
    assert np.all(vals >= p.c1 - 1e-12) and np.all(vals <= p.c2 + 1e-12)
    dvals = xi_prime(phis, p)
    assert np.all(dvals <= p.c3 + 1e-12)
    # finite-difference agreement of the analytic derivative
    eps = 1e-6
    fd = (xi(phis + eps, p) - xi(phis - eps, p)) / (2 * eps)
    assert np.max(np.abs(fd - dvals)) < 1e-7


def test_h0_values_and_symmetry(blend_params):
    p = blend_params
    assert abs(h0(0.7, 0.7, p) - xi_prime(0.7, p)) < 1e-14
    expected = (xi(0.5, p) - xi(0.0, p)) / 0.5
    assert abs(h0(0.5, 0.0, p) - expected) < 1e-12
    assert abs(h0(0.5, 0.0, p) - 0.986614) < 1e-6
    rng = np.random.default_rng(0)
    a = rng.normal(size=200)
    b = rng.normal(size=200)
    assert np.array_equal(h0(a, b, p), h0(b, a, p))
    # bounded by the derivative sup over the bracket
    for av, bv in zip(a[:50], b[:50]):
        lo, hi = min(av, bv), max(av, bv)
        sup = np.max(np.abs(xi_prime(np.linspace(lo, hi, 200), p)))
        assert abs(h0(av, bv, p)) <= sup + 1e-10


def test_h0_constant_xi():
    p = Params(xi1=2.0, xi2=2.0)
    assert h0(0.3, -0.6, p) == 0.0


def test_h0_dphi_finite_difference(blend_params):
    p = blend_params
    rng = np.random.default_rng(1)
    a = rng.uniform(-1, 1, size=50)
    b = rng.uniform(-1, 1, size=50)
    eps = 1e-6
    fd = (h0(a + eps, b, p) - h0(a - eps, b, p)) / (2 * eps)
    assert np.max(np.abs(fd - h0_dphi(a, b, p))) < 1e-5


def test_nu_blend():
    p = Params(nu1=1.0, nu2=1.0)
    assert nu(0.37, p) == 1.0
    p = Params(nu1=1.0, nu2=10.0, eta_blend=0.1)
    assert abs(nu(0.0, p) - 5.5) < 1e-14
    expected = 1.0 + 9.0 / (1.0 + math.exp(-5.0))
    assert abs(nu(0.5, p) - expected) < 1e-12
    assert abs(nu(0.5, p) - 9.9398) < 2e-4


def test_rho_affine_endpoints():
    p = Params(rho1=1.0, rho2=3.0)
    assert rho(1.0, p) == 3.0 and rho(-1.0, p) == 1.0
    assert rho(0.0, p) == 2.0
    p2 = Params(rho1=2.5, rho2=2.5)
    assert rho(0.73, p2) == 2.5
    # exact affinity
    rng = np.random.default_rng(2)
    x, y, t = rng.normal(), rng.normal(), rng.random()
    assert abs(rho(t * x + (1 - t) * y, p) -
               (t * rho(x, p) + (1 - t) * rho(y, p))) < 1e-14
    # density bounds for |phi| <= 1
    phis = np.linspace(-1, 1, 101)
    vals = rho(phis, p)
    assert np.all(vals >= 1.0 - 1e-14) and np.all(vals <= 3.0 + 1e-14)


def test_psi_values():
    p = Params(a=1.0, b=2.0)
    assert psi(0.0, p) == 0.0
    # limit values at saturation: a ln 2 - b/2
    assert abs(psi(1.0, p) - (math.log(2.0) - 1.0)) < 1e-14
    assert abs(psi(-1.0, p) - (math.log(2.0) - 1.0)) < 1e-14
    with pytest.raises(ValueError):
        psi(1.0 + 1e-9, p)


def test_psi0_prime_values_and_monotonicity():
    p = Params(a=1.0, b=2.0)
    assert psi0_prime(0.0, p) == 0.0
    assert abs(psi0_prime(0.5, p) - 0.5 * math.log(3.0)) < 1e-12
    assert abs(psi0_prime(0.5, p) - 0.549306) < 1e-6
    s = np.linspace(-0.999999, 0.999999, 4001)
    vals = psi0_prime(s, p)
    assert np.all(np.diff(vals) > 0.0)
    assert psi0_prime(1.0 - 1e-15, p) > 13.0   # clamped log blow-up
    with pytest.raises(ValueError):
        psi0_prime(-1.01, p)


def test_psi0_second_positive_and_identity():
    p = Params(a=1.3, b=2.2)
    s = np.linspace(-1 + 1e-6, 1 - 1e-6, 1001)
    assert np.all(psi0_second(s, p) > 0.0)
    # psi0_prime(s) - kappa s equals the analytic Psi'(s) for kappa = b
    analytic = 0.5 * p.a * np.log((1 + s) / (1 - s)) - p.b * s
    assert np.max(np.abs(psi0_prime(s, p) - p.kappa * s - analytic)) < 1e-13


def test_psi0_with_kappa_override():
    p = Params(a=1.0, b=2.0, kappa=1.5)   # kappa >= b - a
    s = np.linspace(-0.99, 0.99, 101)
    # identity holds for any admissible kappa
    analytic = 0.5 * np.log((1 + s) / (1 - s)) - 2.0 * s
    assert np.max(np.abs(psi0_prime(s, p) - 1.5 * s - analytic)) < 1e-13
    assert np.all(psi0_second(s, p) > 0.0)
    # psi0 = psi + kappa s^2 / 2
    assert np.max(np.abs(psi0(s, p) - (psi(s, p) + 0.75 * s ** 2))) < 1e-14


def test_saturation_guard():
    assert is_saturated(1.0 - 1e-13)
    assert not is_saturated(0.999)
    p = Params()
    v1 = psi0_prime(1.0 - 1e-13, p)
    v2 = psi0_prime(1.0, p)
    assert v1 == v2    # clamped inside the guard band


def test_cubic_split_values():
    e = np.array([0.0, 1.0, 0.0])
    assert np.allclose(cubic_split(e, e), 0.0)
    m = np.array([1.0, 0.0, 0.0])
    assert np.allclose(cubic_split(m, np.zeros(3)), m)
    out = cubic_split(np.array([2.0, 0.0, 0.0]), np.array([1.0, 1.0, 0.0]))
    assert np.allclose(out, [7.0, -1.0, 0.0])


def test_lemma41_gap_special_cases():
    a = np.array([0.4, -0.2, 0.9])
    assert abs(lemma41_gap(a, a)) < 1e-14
    gap = lemma41_gap(np.array([1.0, 0.0, 0.0]), np.zeros(3))
    assert abs(gap) < 1e-14
    assert abs(lemma41_gap(np.zeros(3), np.zeros(3))) < 1e-14


def test_lemma41_gap_random_sweep():
    rng = np.random.default_rng(42)
    a = rng.uniform(-2, 2, size=(3, 100000))
    b = rng.uniform(-2, 2, size=(3, 100000))
    gaps = lemma41_gap(a, b)
    assert float(np.min(gaps)) >= -1e-12
