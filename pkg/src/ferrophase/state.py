"""Per-time-level state container, total energy, dissipation, and mass.

The energy breakdown mirrors the five summands of the Lyapunov functional:
kinetic, magnetization exchange, saturation penalty, interface, and mixing.
Quadratures are chosen so that the per-step telescoping used by the discrete
energy estimate is exact: quadratic gradient terms are face quadratures in
disguise (cell averaging of face squares), density and exchange weights are
interpolated with the same arithmetic averages the stepper uses.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import materials as mat
from .grid import (FaceField, Grid, MagField, ScalarField, avg_to_face, cell_sum,
                   div_face, face_sq_to_center, grad_cc, grad_sq_center, viscous_form)


@dataclass
class State:
    """All unknowns of one time level."""

    v: FaceField          # velocity, no-slip
    p: ScalarField        # pressure, zero-mean gauge
    m: MagField           # magnetization, 3 components
    phi: ScalarField      # order parameter, |phi| <= 1 - eps
    mu: ScalarField       # chemical potential

    def __post_init__(self):
        g = self.grid
        for f in (self.p, self.phi, self.mu):
            if f.grid != g:
                raise ValueError("state fields live on different grids")
        if self.m.grid != g:
            raise ValueError("state fields live on different grids")

    @property
    def grid(self) -> Grid:
        return self.v.grid

    def copy(self) -> "State":
        return State(self.v.copy(), self.p.copy(), self.m.copy(),
                     self.phi.copy(), self.mu.copy())

    @classmethod
    def zeros(cls, grid: Grid) -> "State":
        return cls(FaceField.zeros(grid), ScalarField.zeros(grid),
                   MagField.zeros(grid), ScalarField.zeros(grid),
                   ScalarField.zeros(grid))


@dataclass
class EnergyBreakdown:
    """The five energy summands and their sum."""

    kinetic: float
    exchange: float
    penalty: float
    interface: float
    mixing: float
    total: float

    @classmethod
    def from_parts(cls, kinetic, exchange, penalty, interface, mixing):
        return cls(kinetic, exchange, penalty, interface, mixing,
                   kinetic + exchange + penalty + interface + mixing)


@dataclass
class StepReport:
    """Solver telemetry for one accepted (or failed) step."""

    picard_iters: int
    picard_residual: float
    newton_iters: dict
    energy_before: EnergyBreakdown
    energy_after: EnergyBreakdown
    dissipation: tuple          # (viscous, chemical, magnetic)
    energy_violation: float
    saturation_flag: bool
    mass_drift: float
    max_div: float


def total_energy(s: State, params: mat.Params) -> EnergyBreakdown:
    """Evaluate the total energy with cell-volume (midpoint) quadrature.

    |v|^2 and the squared gradients are averaged from faces to centers; with
    the homogeneous boundary closures this equals the corresponding face
    quadrature with arithmetically averaged weights exactly.
    """
    g = s.grid
    rho_c = mat.rho(s.phi.values, params)
    xi_c = mat.xi(s.phi.values, params)

    kinetic = 0.5 * cell_sum(rho_c * face_sq_to_center(s.v), g)
    gradm2 = np.zeros((g.nx, g.ny))
    for c in range(3):
        gradm2 += grad_sq_center(s.m.component(c))
    exchange = 0.5 * cell_sum(xi_c * gradm2, g)
    penalty = cell_sum(xi_c * (s.m.magnitude_sq() - 1.0) ** 2, g) / (4.0 * params.alpha ** 2)
    interface = 0.5 * params.eta * cell_sum(grad_sq_center(s.phi), g)
    mixing = cell_sum(mat.psi(s.phi.values, params), g)
    return EnergyBreakdown.from_parts(kinetic, exchange, penalty, interface, mixing)


def magnetic_residual(m_new: MagField, m_old: MagField, phi_old: ScalarField,
                      params: mat.Params) -> np.ndarray:
    """Cellwise div(xi(phi_old) grad M) - xi(phi_old)/alpha^2 * cubic_split, shape (3, nx, ny).

    This is the quantity whose square integrates to the magnetic dissipation
    and whose gradient forces the momentum balance.
    """
    g = m_new.grid
    xi_c = mat.xi(phi_old.values, params)
    xi_f = avg_to_face(ScalarField(g, xi_c))
    cubic = mat.cubic_split(m_new.values, m_old.values)
    out = np.empty((3, g.nx, g.ny))
    for c in range(3):
        gm = grad_cc(m_new.component(c))
        flux = FaceField(g, xi_f.u * gm.u, xi_f.v * gm.v)
        out[c] = div_face(flux).values - (xi_c / params.alpha ** 2) * cubic[c]
    return out


def dissipation(s_new: State, s_old: State, params: mat.Params, h: float):
    """The three dissipation integrals of the per-step energy estimate.

    Returns (viscous, chemical, magnetic): 2 int nu(phi_old) |D v_new|^2,
    int |grad mu_new|^2, and the squared magnetic residual. All three are
    nonnegative by construction.
    """
    if s_new.grid != s_old.grid:
        raise ValueError("states live on different grids")
    g = s_new.grid
    nu_c = mat.nu(s_old.phi.values, params)
    viscous = viscous_form(nu_c, s_new.v, s_new.v)
    gm = grad_cc(s_new.mu)
    chemical = cell_sum(face_sq_to_center(gm), g)
    r = magnetic_residual(s_new.m, s_old.m, s_old.phi, params)
    magnetic = cell_sum(np.sum(r ** 2, axis=0), g)
    return viscous, chemical, magnetic


def mass(phi: ScalarField) -> float:
    """Cell-volume-weighted integral of the order parameter."""
    return cell_sum(phi.values, phi.grid)
