import math

import numpy as np

from ferrophase.grid import (FaceField, MagField, ScalarField, avg_to_face,
                             build_grid, build_grid as bg, face_sq_to_center)
from ferrophase.materials import Params, psi
from ferrophase.state import (EnergyBreakdown, State, dissipation, mass,
                              total_energy)


def uniform_state(g, phi=0.0, m_dir=(1.0, 0.0, 0.0)):
    return State(FaceField.zeros(g), ScalarField.zeros(g),
                 MagField.uniform(g, m_dir), ScalarField.full(g, phi),
                 ScalarField.zeros(g))


def test_total_energy_vanishing_case():
    # v = 0, M unit, phi = 0 with a = 1, b = 2: every part vanishes
    g = build_grid(8, 8, 1.0, 1.0)
    p = Params(a=1.0, b=2.0)
    e = total_energy(uniform_state(g), p)
    for part in (e.kinetic, e.exchange, e.penalty, e.interface, e.mixing, e.total):
        assert abs(part) < 1e-14


def test_total_energy_penalty_constant():
    # v = 0, M = 0, phi = 0, xi = 1, alpha = 1 on the unit square: penalty 1/4
    g = build_grid(8, 8, 1.0, 1.0)
    p = Params(a=1.0, b=2.0, xi1=1.0, xi2=1.0, alpha=1.0)
    s = uniform_state(g)
    s.m.values[:] = 0.0
    e = total_energy(s, p)
    assert abs(e.penalty - 0.25) < 1e-14
    assert abs(e.kinetic) < 1e-14 and abs(e.exchange) < 1e-14
    assert abs(e.interface) < 1e-14 and abs(e.mixing) < 1e-14
    assert abs(e.total - 0.25) < 1e-14


def test_total_energy_kinetic_quadratic():
    g = build_grid(10, 6, 1.0, 1.0)
    rng = np.random.default_rng(0)
    s = uniform_state(g, phi=0.2)
    s.v.u[1:-1, :] = rng.normal(size=(g.nx - 1, g.ny))
    s.v.v[:, 1:-1] = rng.normal(size=(g.nx, g.ny - 1))
    p = Params()
    e1 = total_energy(s, p)
    s2 = s.copy()
    s2.v.u *= 2.0
    s2.v.v *= 2.0
    e2 = total_energy(s2, p)
    assert abs(e2.kinetic - 4.0 * e1.kinetic) < 1e-11 * max(1, e1.kinetic)
    for name in ("exchange", "penalty", "interface", "mixing"):
        assert getattr(e2, name) == getattr(e1, name)


def test_total_energy_parts_sum():
    g = build_grid(9, 7, 1.3, 0.9)
    rng = np.random.default_rng(1)
    s = uniform_state(g, phi=0.1)
    s.phi.values += 0.3 * rng.normal(size=(g.nx, g.ny))
    s.phi.values = np.clip(s.phi.values, -0.95, 0.95)
    s.m.values += 0.2 * rng.normal(size=(3, g.nx, g.ny))
    e = total_energy(s, Params())
    total = e.kinetic + e.exchange + e.penalty + e.interface + e.mixing
    assert abs(e.total - total) <= 1e-13 * max(1.0, abs(total))


def test_total_energy_transpose_invariance():
    # square-symmetric configuration: transposing the grid relabels cells
    g = build_grid(12, 12, 1.0, 1.0)
    rng = np.random.default_rng(2)
    phi_half = rng.normal(size=(12, 12)) * 0.3
    phi_sym = 0.5 * (phi_half + phi_half.T)
    m = np.zeros((3, 12, 12))
    m[2] = 0.4 * phi_sym
    p = Params()
    s1 = State(FaceField.zeros(g), ScalarField.zeros(g), MagField(g, m.copy()),
               ScalarField(g, phi_sym.copy()), ScalarField.zeros(g))
    s2 = State(FaceField.zeros(g), ScalarField.zeros(g),
               MagField(g, np.transpose(m, (0, 2, 1)).copy()),
               ScalarField(g, phi_sym.T.copy()), ScalarField.zeros(g))
    e1, e2 = total_energy(s1, p), total_energy(s2, p)
    assert abs(e1.total - e2.total) < 1e-12 * max(1.0, abs(e1.total))


def test_kinetic_between_density_bounds():
    g = build_grid(8, 8, 1.0, 1.0)
    rng = np.random.default_rng(3)
    p = Params(rho1=1.0, rho2=3.0)
    s = uniform_state(g)
    s.phi.values[:] = rng.uniform(-1.0, 1.0, size=(g.nx, g.ny))
    s.v.u[1:-1, :] = rng.normal(size=(g.nx - 1, g.ny))
    s.v.v[:, 1:-1] = rng.normal(size=(g.nx, g.ny - 1))
    e = total_energy(s, p)
    v2 = face_sq_to_center(s.v)
    lo = 0.5 * 1.0 * float(np.sum(v2)) * g.cell_volume
    hi = 0.5 * 3.0 * float(np.sum(v2)) * g.cell_volume
    assert lo - 1e-12 <= e.kinetic <= hi + 1e-12


def test_dissipation_zero_at_uniform_equilibrium():
    g = build_grid(8, 8, 1.0, 1.0)
    p = Params()
    s = uniform_state(g, phi=0.3)
    out = dissipation(s, s, p, 1e-2)
    assert all(abs(t) < 1e-13 for t in out)


def test_dissipation_nonnegative_random():
    g = build_grid(8, 6, 1.0, 1.0)
    rng = np.random.default_rng(4)
    p = Params()
    for _ in range(10):
        s_old = uniform_state(g, phi=0.1)
        s_old.phi.values += 0.2 * rng.normal(size=(g.nx, g.ny))
        s_old.phi.values = np.clip(s_old.phi.values, -0.9, 0.9)
        s_old.m.values = 0.5 * rng.normal(size=(3, g.nx, g.ny))
        s_new = s_old.copy()
        s_new.v.u[1:-1, :] = 0.3 * rng.normal(size=(g.nx - 1, g.ny))
        s_new.v.v[:, 1:-1] = 0.3 * rng.normal(size=(g.nx, g.ny - 1))
        s_new.mu.values = rng.normal(size=(g.nx, g.ny))
        s_new.m.values += 0.3 * rng.normal(size=(3, g.nx, g.ny))
        visc, chem, mag = dissipation(s_new, s_old, p, 1e-2)
        assert visc >= 0.0 and chem >= 0.0 and mag >= 0.0


def test_dissipation_first_two_vanish_for_rigid_state():
    g = build_grid(8, 8, 1.0, 1.0)
    p = Params()
    s_old = uniform_state(g, phi=0.2)
    s_new = s_old.copy()
    s_new.mu = ScalarField.full(g, 1.75)   # constant potential: no flux
    visc, chem, _ = dissipation(s_new, s_old, p, 1e-2)
    assert visc == 0.0 and abs(chem) < 1e-14


def test_mass_values():
    g = build_grid(8, 8, 2.0, 0.5)
    assert abs(mass(ScalarField.full(g, 0.7)) - 0.7 * g.volume) < 1e-14
    x, y = g.cell_centers()
    anti = ScalarField(g, (x - 1.0))   # antisymmetric about the center
    assert abs(mass(anti)) < 1e-13
    rng = np.random.default_rng(5)
    vals = rng.normal(size=(g.nx, g.ny))
    expected = math.fsum(vals.ravel().tolist()) * g.cell_volume
    assert abs(mass(ScalarField(g, vals)) - expected) < 1e-12
