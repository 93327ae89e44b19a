"""Energy-stable simulator for two-phase magnetic fluid mixtures.

A staggered-grid implementation of an unconditionally stable implicit time
discretization of the coupled incompressible Navier-Stokes / Cahn-Hilliard /
magnetization gradient-flow system with unmatched densities, instrumented to
verify its discrete energy law and invariants at every step.
"""

from .grid import (FaceField, Grid, MagField, ScalarField, advect_scalar,
                   advect_velocity, build_grid, div_face, grad_cc, laplace_neumann)
from .materials import Params, cubic_split, h0, lemma41_gap, nu, psi, psi0_prime, \
    psi0_second, rho, xi, xi_prime
from .state import EnergyBreakdown, State, StepReport, dissipation, mass, total_energy
from .linsolve import SolverFailure, SolverOptions, leray_project, \
    solve_elliptic_vc, solve_poisson_neumann
from .stepper import StepFailure, StepOptions, run, step
from .cli import Config, build_initial_state, main, parse_config

__all__ = [
    "FaceField", "Grid", "MagField", "ScalarField", "advect_scalar",
    "advect_velocity", "build_grid", "div_face", "grad_cc", "laplace_neumann",
    "Params", "cubic_split", "h0", "lemma41_gap", "nu", "psi", "psi0_prime",
    "psi0_second", "rho", "xi", "xi_prime",
    "EnergyBreakdown", "State", "StepReport", "dissipation", "mass", "total_energy",
    "SolverFailure", "SolverOptions", "leray_project", "solve_elliptic_vc",
    "solve_poisson_neumann",
    "StepFailure", "StepOptions", "run", "step",
    "Config", "build_initial_state", "main", "parse_config",
]

__version__ = "0.1.0"
