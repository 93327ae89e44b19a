"""One implicit time step of the coupled system, and the trajectory driver.

Each step solves the fully implicit discrete system

  momentum:   (rho_new v - rho_old v_old)/h + skew advection(rho_old v; v)
              + skew transport(J; v) - (rho_new - rho_old)/(2h) v
              - div(2 nu(phi_old) D v) + grad p
              = -phibar_old grad mu - sum_i avg(R_i) grad M_i,   div v = 0
  magnet.:    (M - M_old)/h + div(v Mbar) = R,
              R = div(xi(phi_old) grad M) - xi(phi_old)/alpha^2 * cubic
  transport:  (phi - phi_old)/h + div(v phibar_old) = laplace mu
  potential:  mu + kappa (phi + phi_old)/2 - H0(phi, phi_old) W
              = -eta laplace phi + Psi0'(phi),
              W = |grad M|^2/2 + (|M|^2 - 1)^2/(4 alpha^2)

where J = -(rho2 - rho1)/2 grad mu and the cubic term is the convex split
|M|^2 M - M_old (or the unstable naive variant |M|^2 M - M for comparison
runs). The outer coupling is a Picard sweep over the three subproblems with
the cross-coupling lagged, so every linear system is solved by the SPD
Krylov machinery; at the fixed point the fully implicit system holds.

The advection and forcing forms are the energy-exact ones from the grid
module: with them, the accepted step satisfies

  E_total(new) + h * (viscous + chemical + magnetic dissipation) <= E_total(old)

up to iteration tolerances, for every step size h.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import materials as mat
from .grid import (FaceField, Grid, MagField, ScalarField, advect_by_flux,
                   advect_raw, advect_scalar, advect_velocity, avg_to_face,
                   cell_inner, cell_norm, cell_sum, div_face, face_inner,
                   grad_cc, grad_sq_center, laplace_neumann, laplace_raw,
                   make_viscous_raw, vc_laplace_raw, viscous_apply, viscous_diag)
from .linsolve import SolverFailure, SolverOptions, conjugate_residual, \
    leray_project, minres, solve_poisson_neumann
from .state import EnergyBreakdown, State, StepReport, dissipation, \
    magnetic_residual, mass, total_energy

_LIN_TOL = 1e-12
_LIN_MAX = 60000
_POISSON_OPTS = SolverOptions(tol_rel=1e-12, max_iters=_LIN_MAX)
_PRECOND_POISSON_OPTS = SolverOptions(tol_rel=1e-9, max_iters=_LIN_MAX)


class StepFailure(RuntimeError):
    """Raised when a nonlinear subsolve or the Picard loop does not converge."""

    def __init__(self, message, history=None):
        super().__init__(message)
        self.history = history or []


@dataclass
class StepOptions:
    """Controls for one implicit step."""

    h: float
    picard_tol: float = 1e-8
    picard_max: int = 200
    newton_tol: float = 1e-9
    newton_max: int = 60
    splitting: str = "convex"       # "convex" | "naive"
    strict_energy: bool = False
    tol_energy_rel: float = 1e-6    # energy violation gate, relative to E_old
    tol_div: float = 1e-8

    def __post_init__(self):
        if not self.h > 0:
            raise ValueError("step size h must be > 0")
        if not (self.picard_tol > 0 and self.newton_tol > 0):
            raise ValueError("tolerances must be > 0")
        if self.picard_max < 1 or self.newton_max < 1:
            raise ValueError("iteration caps must be >= 1")
        if self.splitting not in ("convex", "naive"):
            raise ValueError(f"unknown splitting {self.splitting!r}")


# ---------------------------------------------------------------------------
# frozen per-step data (everything evaluated at the old time level)

class _StepData:
    def __init__(self, state_k: State, params: mat.Params, opts: StepOptions):
        g = state_k.grid
        self.grid = g
        self.params = params
        self.opts = opts
        self.phi_k = state_k.phi
        self.rho_k_c = mat.rho(state_k.phi.values, params)
        self.rho_k_f = avg_to_face(ScalarField(g, self.rho_k_c))
        self.nu_k_c = mat.nu(state_k.phi.values, params)
        self.xi_k_c = mat.xi(state_k.phi.values, params)
        self.xi_k_f = avg_to_face(ScalarField(g, self.xi_k_c))
        self.phibar_k = avg_to_face(state_k.phi)
        self.drho = 0.5 * (params.rho2 - params.rho1)


def _cubic_term(m_vals: np.ndarray, m_old_vals: np.ndarray, splitting: str) -> np.ndarray:
    if splitting == "convex":
        return mat.cubic_split(m_vals, m_old_vals)
    return mat.cubic_split(m_vals, m_vals)   # |M|^2 M - M, the unstable variant


# ---------------------------------------------------------------------------
# magnetization subproblem

def solve_magnetization(state_k: State, v_it: FaceField, opts: StepOptions,
                        params: mat.Params) -> MagField:
    """Solve the implicit magnetization equation for the given velocity iterate.

    Quasi-Newton iteration on the full residual: the cubic term is linearized
    exactly (per-cell 3x3 blocks |M|^2 I + 2 M (x) M), the skew advection term
    is kept in the residual but dropped from the Jacobian so every linear
    system stays symmetric positive definite.
    """
    data = _StepData(state_k, params, opts)
    m, _ = _solve_magnetization(data, state_k, v_it)
    return m


def _solve_magnetization(data: _StepData, state_k: State, v_it: FaceField,
                         m_start: MagField | None = None,
                         tol_floor: float | None = None):
    g = data.grid
    p = data.params
    opts = data.opts
    h = opts.h
    xi_c = data.xi_k_c
    xi_f = data.xi_k_f
    alpha2 = p.alpha ** 2
    m_old = state_k.m.values
    m = m_old.copy() if m_start is None else m_start.values.copy()
    shape = m.shape

    cu_in = xi_f.u[1:-1, :]
    cv_in = xi_f.v[:, 1:-1]

    def diffusion(m_vals):
        out = np.empty(shape)
        for c in range(3):
            out[c] = vc_laplace_raw(m_vals[c], cu_in, cv_in, g.dx, g.dy)
        return out

    def advection(m_vals):
        out = np.empty(shape)
        for c in range(3):
            out[c] = advect_raw(v_it.u, v_it.v, m_vals[c], g.dx, g.dy)
        return out

    def residual(m_vals):
        cubic = _cubic_term(m_vals, m_old, opts.splitting)
        return (m_vals - m_old) / h + advection(m_vals) \
            - diffusion(m_vals) + (xi_c / alpha2) * cubic

    def res_norm(r):
        return math.sqrt(sum(cell_inner(r[c], r[c], g) for c in range(3)))

    r = residual(m)
    norm0 = res_norm(r)
    eff = opts.newton_tol if tol_floor is None else max(opts.newton_tol,
                                                        min(1e-5, tol_floor))
    lap_scale = float(np.max(xi_f.u)) * (4.0 / g.dx ** 2 + 4.0 / g.dy ** 2)
    def tol_now():
        m_norm = math.sqrt(sum(cell_inner(m[c], m[c], g) for c in range(3)))
        return max(eff * max(1.0, norm0),
                   512.0 * np.finfo(float).eps * lap_scale * m_norm)
    tol = tol_now()
    if norm0 <= tol:
        return MagField(g, m), 0

    lap_diag = np.zeros((g.nx, g.ny))
    lap_diag[1:, :] += xi_f.u[1:-1, :] / g.dx ** 2
    lap_diag[:-1, :] += xi_f.u[1:-1, :] / g.dx ** 2
    lap_diag[:, 1:] += xi_f.v[:, 1:-1] / g.dy ** 2
    lap_diag[:, :-1] += xi_f.v[:, 1:-1] / g.dy ** 2
    coef = xi_c / alpha2

    for it in range(1, opts.newton_max + 1):
        # SPD approximate Jacobian: I/h - div(xi grad .) + xi/alpha^2 (|M|^2 I + 2 M Mt)
        mag2 = np.sum(m ** 2, axis=0)

        def apply_jac(x):
            xm = x.reshape(shape)
            out = xm / h - diffusion(xm)
            out += coef * (mag2[None] * xm + 2.0 * m * np.sum(m * xm, axis=0)[None])
            return out.ravel()

        diag = np.empty(shape)
        for c in range(3):
            diag[c] = 1.0 / h + lap_diag + coef * (mag2 + 2.0 * m[c] ** 2)
        dflat = diag.ravel()

        def precond(rr):
            return rr / dflat

        rn_prev = res_norm(r)
        lin_tol = min(1e-2, max(0.05 * tol / max(rn_prev, 1e-300), 1e-12))
        delta, info = conjugate_residual(apply_jac, -r.ravel(), tol_rel=lin_tol,
                                         max_iters=_LIN_MAX, precond=precond)
        if not info.converged:
            raise StepFailure(f"magnetization linear solve stalled "
                              f"(residual {info.residual:.3e})")
        delta = delta.reshape(shape)

        lam = 1.0
        r_trial = r
        improved = False
        for _ in range(40):
            trial = m + lam * delta
            r_trial = residual(trial)
            rn = res_norm(r_trial)
            if rn <= rn_prev * (1.0 + 1e-12) or rn <= tol:
                improved = True
                break
            lam *= 0.5
        if not improved and rn_prev <= 32.0 * tol:
            return MagField(g, m), it    # round-off floor reached
        m = m + lam * delta
        r = r_trial
        tol = tol_now()
        if res_norm(r) <= tol:
            return MagField(g, m), it
    raise StepFailure(f"magnetization Newton did not converge: residual "
                      f"{res_norm(r):.3e} after {opts.newton_max} iterations "
                      f"(tolerance {tol:.3e})")


# ---------------------------------------------------------------------------
# Cahn-Hilliard subproblem

def _mu_of_phi(phi_vals, w_vals, data: _StepData):
    """Pointwise chemical potential for a given order parameter iterate."""
    p = data.params
    g = data.grid
    phi_f = ScalarField(g, phi_vals)
    lap_phi = laplace_neumann(phi_f).values
    hk = mat.h0(phi_vals, data.phi_k.values, p)
    return (-p.eta * lap_phi + mat.psi0_prime(phi_vals, p)
            - 0.5 * p.kappa * (phi_vals + data.phi_k.values) + hk * w_vals)


def solve_cahn_hilliard(state_k: State, v_it: FaceField, m_it: MagField,
                        opts: StepOptions, params: mat.Params):
    """Solve the coupled (phi, mu) pair for frozen velocity and magnetization.

    mu is eliminated through its pointwise definition, leaving one nonlinear
    equation in phi solved by a damped quasi-Newton iteration. Iterates are
    clamped into |phi| <= 1 - eps by halving the update. The linear systems
    (identity/h plus laplacian composed with the convex linearization) are
    self-adjoint positive in the linearization-weighted inner product and are
    solved with the Krylov core in that metric. The cell mean of phi is fixed
    by the conservative transport term, so mass is conserved exactly.
    """
    data = _StepData(state_k, params, opts)
    phi, mu, _ = _solve_cahn_hilliard(data, state_k, v_it, m_it)
    return phi, mu


def _solve_cahn_hilliard(data: _StepData, state_k: State, v_it: FaceField,
                         m_it: MagField, phi_start: np.ndarray | None = None,
                         tol_floor: float | None = None):
    g = data.grid
    p = data.params
    opts = data.opts
    h = opts.h
    limit = 1.0 - mat.SATURATION_EPS

    if np.max(np.abs(state_k.phi.values)) > limit:
        raise StepFailure("old order parameter violates the saturation bound")

    # frozen coupling weight W = |grad M|^2 / 2 + (|M|^2 - 1)^2 / (4 alpha^2)
    gradm2 = np.zeros((g.nx, g.ny))
    for c in range(3):
        gradm2 += grad_sq_center(m_it.component(c))
    w_vals = 0.5 * gradm2 + (m_it.magnitude_sq() - 1.0) ** 2 / (4.0 * p.alpha ** 2)

    adv = advect_scalar(v_it, data.phi_k).values   # explicit, uses phi_old
    phi_old = data.phi_k.values
    shape = (g.nx, g.ny)

    def neg_lap(x):
        return -laplace_raw(x.reshape(shape), g.dx, g.dy).ravel()

    lap_diag = np.full(shape, 2.0 / g.dx ** 2 + 2.0 / g.dy ** 2)
    lap_diag[0, :] -= 1.0 / g.dx ** 2
    lap_diag[-1, :] -= 1.0 / g.dx ** 2
    lap_diag[:, 0] -= 1.0 / g.dy ** 2
    lap_diag[:, -1] -= 1.0 / g.dy ** 2
    lap_diag_flat = lap_diag.ravel()
    n_cells = g.nx * g.ny

    def residual_at(phi_vals, h_cur):
        mu_vals = _mu_of_phi(phi_vals, w_vals, data)
        lap_mu = laplace_raw(mu_vals, g.dx, g.dy)
        return (phi_vals - phi_old) / h_cur + adv - lap_mu

    def lm_newton(h_cur, phi_start, tol_abs, max_it):
        """Damped Newton with pseudo-transient (Levenberg) regularization.

        Directions solve ((1/h + tau) I + (-laplace) B) dphi = -r through the
        equivalent symmetric (phi, mu) block system with preconditioned
        MINRES; B = eta (-laplace) + diag(g) with the exact convex-split
        linearization g, which turns indefinite past the fastest spinodal
        timescale, so tau adapts to the observed step quality.
        """
        phi_c = phi_start.copy()
        r = residual_at(phi_c, h_cur)
        tau = 0.0
        eps_mach = np.finfo(float).eps
        for it in range(max_it):
            rn_prev = cell_norm(r, g)
            # achievable-residual floor: round-off of laplace(mu) evaluations
            mu_c = _mu_of_phi(phi_c, w_vals, data)
            tol_eff = max(tol_abs, 512.0 * eps_mach * lap_diag_flat.max()
                          * cell_norm(mu_c, g))
            if rn_prev <= tol_eff:
                return phi_c, True, it
            gw = mat.psi0_second(phi_c, p) - 0.5 * p.kappa \
                + w_vals * mat.h0_dphi(phi_c, phi_old, p)
            gf = gw.ravel()
            lin_tol = min(1e-2, max(0.05 * tol_abs / max(rn_prev, 1e-300), 1e-12))

            accepted = False
            for _ in range(22):
                h_eff = 1.0 / (1.0 / h_cur + tau)

                def apply_block(t):
                    dphi = t[:n_cells]
                    dmu = t[n_cells:]
                    top = p.eta * neg_lap(dphi) + gf * dphi - dmu
                    bot = -dphi - h_eff * neg_lap(dmu)
                    return np.concatenate([top, bot])

                pb = p.eta * lap_diag_flat + np.abs(gf) + 1.0
                pdiag = np.concatenate([pb, h_eff * lap_diag_flat + 1.0 / pb])
                rhs = np.concatenate([np.zeros(n_cells), h_eff * r.ravel()])
                sol, info = minres(apply_block, rhs, tol_rel=lin_tol,
                                   max_iters=_LIN_MAX,
                                   precond=lambda rr: rr / pdiag)
                if not info.converged:
                    raise StepFailure(f"Cahn-Hilliard linear solve stalled "
                                      f"(residual {info.residual:.3e})")
                delta = sol[:n_cells].reshape(shape)
                lam = 1.0
                r_trial = r
                for _ in range(25):
                    trial = phi_c + lam * delta
                    if np.max(np.abs(trial)) > limit:
                        lam *= 0.5   # halve the update until inside the phase bound
                        continue
                    r_trial = residual_at(trial, h_cur)
                    rn = cell_norm(r_trial, g)
                    if rn <= rn_prev * (1.0 - 1e-4 * lam) or rn <= tol_eff:
                        accepted = True
                        break
                    lam *= 0.5
                if accepted:
                    phi_c = trial
                    r = r_trial
                    if lam >= 1.0:
                        tau = 0.0 if tau < 1e-3 / h_cur else tau / 2.0
                    elif lam <= 0.125:
                        tau = max(2.0 * tau, 0.25 / h_cur)
                    break
                tau = max(4.0 * tau, 0.25 / h_cur)
            if not accepted:
                # a stall within a small multiple of the round-off floor is
                # the attainable solution in float64
                if rn_prev <= 32.0 * tol_eff:
                    return phi_c, True, it
                return phi_c, False, it
        return phi_c, False, max_it

    norm0 = cell_norm(residual_at(phi_old, h), g)
    eff = opts.newton_tol if tol_floor is None else max(opts.newton_tol,
                                                        min(1e-5, tol_floor))
    tol = eff * max(1.0, norm0)

    start = phi_old if phi_start is None else phi_start
    phi, ok, iters = lm_newton(h, start, tol, opts.newton_max)
    if not ok:
        # homotopy in the step size: the target equation can sit behind a
        # spinodal fold; climb a ladder of smaller internal steps, warm
        # starting each rung, and solve the final rung to full tolerance
        phi = phi_old
        for k in (16, 8, 4, 2, 1):
            rung_tol = tol if k == 1 else max(tol, 1e-5 * max(1.0, norm0))
            phi, ok, its = lm_newton(h / k, phi, rung_tol, opts.newton_max)
            iters += its
            if not ok:
                raise StepFailure(
                    f"Cahn-Hilliard Newton did not converge (continuation rung "
                    f"h/{k}): residual {cell_norm(residual_at(phi, h / k), g):.3e}, "
                    f"max|phi| = {float(np.max(np.abs(phi))):.6f}",
                    history=[float(np.max(np.abs(phi)))])

    # project onto the exact mass invariant; the shift is at solver-tolerance
    # level because the transport row conserves the cell sum identically
    phi = phi + (float(np.mean(phi_old)) - float(np.mean(phi)))
    phi = np.clip(phi, -limit, limit)
    mu_vals = _mu_of_phi(phi, w_vals, data)
    return ScalarField(g, phi), ScalarField(g, mu_vals), iters


# ---------------------------------------------------------------------------
# momentum subproblem

def _momentum_forcing(data: _StepData, m_it: MagField, mu_it: ScalarField,
                      m_old: MagField) -> FaceField:
    """Capillary plus magnetic forcing at faces.

    -phibar_old grad(mu) + sum_i avg(-R_i) grad(M_i), with R the magnetic
    residual. Both terms pair exactly against the advection terms of the
    scalar equations in the energy identity (the second up to an exact
    discrete gradient absorbed by the pressure).
    """
    g = data.grid
    gmu = grad_cc(mu_it)
    fu = -data.phibar_k.u * gmu.u
    fv = -data.phibar_k.v * gmu.v
    r = magnetic_residual(m_it, m_old, data.phi_k, data.params)
    for c in range(3):
        rbar = avg_to_face(ScalarField(g, r[c]))
        gm = grad_cc(m_it.component(c))
        fu -= rbar.u * gm.u
        fv -= rbar.v * gm.v
    return FaceField(g, fu, fv)


def _j_flux(mu_it: ScalarField, data: _StepData) -> FaceField:
    """Relative diffusion flux J = -(rho2 - rho1)/2 grad(mu) on faces."""
    gmu = grad_cc(mu_it)
    return FaceField(data.grid, -data.drho * gmu.u, -data.drho * gmu.v)


def solve_momentum(state_k: State, m_it: MagField, phi_it: ScalarField,
                   mu_it: ScalarField, v_prev_it: FaceField, opts: StepOptions,
                   params: mat.Params):
    """Solve the momentum/pressure subproblem with lagged transport terms.

    The implicit operator is H = rho_new/h + viscous form (SPD); convection,
    J-transport and the density-correction term are evaluated at the previous
    Picard velocity iterate. The divergence constraint is enforced by
    conjugate gradients on the pressure Schur complement preconditioned with
    the standard mass/Poisson combination, followed by one Leray projection
    of the provisional velocity to polish div v to the solver floor. Returns
    a no-slip velocity and a zero-mean pressure.
    """
    data = _StepData(state_k, params, opts)
    return _solve_momentum(data, state_k, m_it, phi_it, mu_it, v_prev_it)


def _solve_momentum(data: _StepData, state_k: State, m_it: MagField,
                    phi_it: ScalarField, mu_it: ScalarField,
                    v_prev_it: FaceField, p_start: ScalarField | None = None,
                    schur_tol: float = 1e-11):
    g = data.grid
    p = data.params
    opts = data.opts
    h = opts.h
    rho_new_c = mat.rho(phi_it.values, p)
    rho_new_f = avg_to_face(ScalarField(g, rho_new_c))

    # explicit right-hand side: old inertia, lagged transport, forcings
    force = _momentum_forcing(data, m_it, mu_it, state_k.m)
    adv = advect_velocity(data.rho_k_f, v_prev_it, v_prev_it)
    jflux = _j_flux(mu_it, data)
    jtrans = advect_by_flux(jflux, v_prev_it)
    drho_f_u = (rho_new_f.u - data.rho_k_f.u) / (2.0 * h)
    drho_f_v = (rho_new_f.v - data.rho_k_f.v) / (2.0 * h)

    fu = data.rho_k_f.u * state_k.v.u / h - adv.u - jtrans.u \
        + drho_f_u * v_prev_it.u + force.u
    fv = data.rho_k_f.v * state_k.v.v / h - adv.v - jtrans.v \
        + drho_f_v * v_prev_it.v + force.v
    # boundary-normal faces are not unknowns
    fu[0, :] = fu[-1, :] = 0.0
    fv[:, 0] = fv[:, -1] = 0.0

    nu_c = data.nu_k_c
    hdiag = viscous_diag(nu_c, g)
    hu_diag = hdiag.u + rho_new_f.u / h
    hv_diag = hdiag.v + rho_new_f.v / h
    hu_diag[0, :] = hu_diag[-1, :] = 1.0
    hv_diag[:, 0] = hv_diag[:, -1] = 1.0

    nu_len = (g.nx + 1) * g.ny
    visc_raw = make_viscous_raw(nu_c, g)

    def pack(f: FaceField):
        return np.concatenate([f.u.ravel(), f.v.ravel()])

    def unpack(x):
        return FaceField(g, x[:nu_len].reshape(g.nx + 1, g.ny),
                         x[nu_len:].reshape(g.nx, g.ny + 1))

    diag_flat = np.concatenate([hu_diag.ravel(), hv_diag.ravel()])

    def apply_h(x):
        u = x[:nu_len].reshape(g.nx + 1, g.ny)
        v = x[nu_len:].reshape(g.nx, g.ny + 1)
        ku, kv = visc_raw(u, v)
        ou = rho_new_f.u * u / h + ku
        ov = rho_new_f.v * v / h + kv
        # boundary dofs are locked: identity rows keep them trivially solvable
        ou[0, :] = u[0, :]
        ou[-1, :] = u[-1, :]
        ov[:, 0] = v[:, 0]
        ov[:, -1] = v[:, -1]
        return np.concatenate([ou.ravel(), ov.ravel()])

    def h_precond(r):
        return r / diag_flat

    def solve_h(rhs_vec, x0=None):
        x, info = conjugate_residual(apply_h, rhs_vec, x0=x0, tol_rel=_LIN_TOL,
                                     max_iters=_LIN_MAX, precond=h_precond)
        if not info.converged:
            raise SolverFailure("momentum velocity solve stalled",
                                residual=info.residual, iterations=info.iterations)
        return x

    f_vec = pack(FaceField(g, fu, fv))
    vstar_vec = solve_h(f_vec, x0=pack(v_prev_it))

    def div_raw_vec(x):
        u = x[:nu_len].reshape(g.nx + 1, g.ny)
        v = x[nu_len:].reshape(g.nx, g.ny + 1)
        return np.diff(u, axis=0) / g.dx + np.diff(v, axis=1) / g.dy

    # pressure Schur complement (positive form): -div(H^-1 grad q) = -div(v*)
    def apply_s(q_flat):
        q = q_flat.reshape(g.nx, g.ny)
        gu = np.zeros((g.nx + 1, g.ny))
        gv = np.zeros((g.nx, g.ny + 1))
        gu[1:-1, :] = np.diff(q, axis=0) / g.dx
        gv[:, 1:-1] = np.diff(q, axis=1) / g.dy
        w = solve_h(np.concatenate([gu.ravel(), gv.ravel()]))
        return -div_raw_vec(w).ravel()

    nu_bar = float(np.mean(nu_c))
    rho_bar = float(np.mean(rho_new_c))

    def s_precond(r_flat):
        # mass + inverse-Poisson combination, uniformly effective in h and nu
        r = ScalarField(g, r_flat.reshape(g.nx, g.ny))
        pois = solve_poisson_neumann(r, _PRECOND_POISSON_OPTS)
        out = nu_bar * r_flat - (rho_bar / h) * pois.values.ravel()
        return out - np.mean(out)

    rhs_s = -div_raw_vec(vstar_vec).ravel()
    rhs_s -= np.mean(rhs_s)
    p0 = None if p_start is None else p_start.values.ravel()
    # absolute floor: the divergence defect only has to stay far below the
    # velocity scale; the closing Leray projection polishes the rest
    vscale = max(1.0, float(np.max(np.abs(vstar_vec))))
    atol_s = 1e-10 * vscale / np.sqrt(g.cell_volume)
    p_flat, info = conjugate_residual(apply_s, rhs_s, x0=p0, tol_rel=schur_tol,
                                      max_iters=5000, precond=s_precond,
                                      atol=atol_s)
    if not info.converged:
        raise SolverFailure("pressure Schur solve stalled", residual=info.residual,
                            iterations=info.iterations)

    p_field = ScalarField(g, p_flat.reshape(g.nx, g.ny) - np.mean(p_flat))
    gp = grad_cc(p_field)
    v_vec = solve_h(f_vec - pack(gp), x0=vstar_vec)
    v_new = unpack(v_vec)

    # final polish: project the provisional velocity onto the divergence-free
    # subspace; the correction is at the Schur residual level
    v_new, dq = leray_project(v_new, _POISSON_OPTS)
    p_vals = p_field.values + dq.values * (rho_bar / h)
    p_field = ScalarField(g, p_vals - np.mean(p_vals))
    v_new.u[0, :] = v_new.u[-1, :] = 0.0
    v_new.v[:, 0] = v_new.v[:, -1] = 0.0
    return v_new, p_field


# ---------------------------------------------------------------------------
# coupled residuals of the fully implicit system (shared with verify)

def coupled_residuals(new: State, old: State, params: mat.Params, h: float,
                      splitting: str = "convex"):
    """Residual fields of all equations at a candidate new state.

    Returns a dict with FaceField 'momentum', ScalarField 'div', stacked
    array 'magnetization' (3, nx, ny), and ScalarFields 'transport' and
    'potential'. The momentum residual includes the pressure gradient and is
    zero on boundary-normal faces.
    """
    opts = StepOptions(h=h, splitting=splitting)
    data = _StepData(old, params, opts)
    g = new.grid
    p = params

    rho_new_f = avg_to_face(ScalarField(g, mat.rho(new.phi.values, p)))
    force = _momentum_forcing(data, new.m, new.mu, old.m)
    adv = advect_velocity(data.rho_k_f, new.v, new.v)
    jtrans = advect_by_flux(_j_flux(new.mu, data), new.v)
    kv = viscous_apply(data.nu_k_c, new.v)
    gp = grad_cc(new.p)

    ru = (rho_new_f.u * new.v.u - data.rho_k_f.u * old.v.u) / h + adv.u + jtrans.u \
        - (rho_new_f.u - data.rho_k_f.u) / (2.0 * h) * new.v.u \
        + kv.u + gp.u - force.u
    rv = (rho_new_f.v * new.v.v - data.rho_k_f.v * old.v.v) / h + adv.v + jtrans.v \
        - (rho_new_f.v - data.rho_k_f.v) / (2.0 * h) * new.v.v \
        + kv.v + gp.v - force.v
    ru[0, :] = ru[-1, :] = 0.0
    rv[:, 0] = rv[:, -1] = 0.0

    rm = np.empty((3, g.nx, g.ny))
    r_mag = magnetic_residual(new.m, old.m, old.phi, p)
    extra = np.zeros((g.nx, g.ny))
    if splitting == "naive":
        # magnetic residual with the naive cubic differs by xi/alpha^2 (M - M_old)
        extra_all = (data.xi_k_c / p.alpha ** 2)[None] * (new.m.values - old.m.values)
    else:
        extra_all = np.zeros((3, g.nx, g.ny))
    for c in range(3):
        advm = advect_scalar(new.v, new.m.component(c)).values
        rm[c] = (new.m.values[c] - old.m.values[c]) / h + advm - r_mag[c] - extra_all[c]

    gradm2 = np.zeros((g.nx, g.ny))
    for c in range(3):
        gradm2 += grad_sq_center(new.m.component(c))
    w_vals = 0.5 * gradm2 + (new.m.magnitude_sq() - 1.0) ** 2 / (4.0 * p.alpha ** 2)
    rphi = (new.phi.values - old.phi.values) / h \
        + advect_scalar(new.v, old.phi).values - laplace_neumann(new.mu).values
    rmu = new.mu.values - _mu_of_phi(new.phi.values, w_vals, data)

    return {
        "momentum": FaceField(g, ru, rv),
        "div": div_face(new.v),
        "magnetization": rm,
        "transport": ScalarField(g, rphi),
        "potential": ScalarField(g, rmu),
    }


def residual_norms(new: State, old: State, params: mat.Params, h: float,
                   splitting: str = "convex") -> dict:
    res = coupled_residuals(new, old, params, h, splitting)
    g = new.grid
    return {
        "momentum": math.sqrt(face_inner(res["momentum"], res["momentum"])),
        "div": float(np.max(np.abs(res["div"].values))),
        "magnetization": math.sqrt(sum(cell_inner(res["magnetization"][c],
                                                  res["magnetization"][c], g)
                                       for c in range(3))),
        "transport": cell_norm(res["transport"].values, g),
        "potential": cell_norm(res["potential"].values, g),
    }


# ---------------------------------------------------------------------------
# one step and the trajectory driver

def _rel_change(a_new, a_old, norm_floor=1e-30):
    num = 0.0
    den = 0.0
    for x, y in zip(a_new, a_old):
        num += float(np.sum((x - y) ** 2))
        den += float(np.sum(x ** 2))
    return math.sqrt(num) / max(math.sqrt(den), norm_floor)


def step(state_k: State, params: mat.Params, opts: StepOptions):
    """Advance one implicit step; returns (new state, report).

    Picard sweeps magnetization -> Cahn-Hilliard -> momentum with the
    freshest iterates until the relative update of (v, M, phi, mu) drops
    below picard_tol. Raises StepFailure on non-convergence, and, when
    strict_energy is set, on an energy violation beyond tolerance.
    """
    g = state_k.grid
    data = _StepData(state_k, params, opts)
    e_before = total_energy(state_k, params)

    v_it = state_k.v
    m_it = state_k.m
    phi_it = state_k.phi
    mu_it = state_k.mu
    p_it = state_k.p

    newton_m = 0
    newton_ch = 0
    history = []
    converged = False
    relax = 1.0
    prev_change = None

    for sweep in range(1, opts.picard_max + 1):
        # tolerances tighten with the Picard residual: early sweeps are cheap,
        # the exit sweep is solved to full accuracy
        guide = 1.0 if prev_change is None else prev_change
        tol_floor = 3e-3 * guide
        schur_tol = min(1e-8, max(1e-11, 3e-4 * guide))
        m_new, n_m = _solve_magnetization(data, state_k, v_it, m_start=m_it,
                                          tol_floor=tol_floor)
        phi_new, mu_new, n_ch = _solve_cahn_hilliard(data, state_k, v_it, m_new,
                                                     phi_start=phi_it.values,
                                                     tol_floor=tol_floor)
        v_new, p_new = _solve_momentum(data, state_k, m_new, phi_new, mu_new,
                                       v_it, p_start=p_it, schur_tol=schur_tol)
        newton_m += n_m
        newton_ch += n_ch

        if relax < 1.0:
            v_new = FaceField(g, v_it.u + relax * (v_new.u - v_it.u),
                              v_it.v + relax * (v_new.v - v_it.v))

        change = _rel_change(
            (v_new.u, v_new.v, m_new.values, phi_new.values, mu_new.values),
            (v_it.u, v_it.v, m_it.values, phi_it.values, mu_it.values))
        history.append(change)
        v_it, m_it, phi_it, mu_it, p_it = v_new, m_new, phi_new, mu_new, p_new
        if change <= opts.picard_tol:
            converged = True
            break
        if prev_change is not None and change > 2.0 * prev_change and change > 1.0:
            relax = max(0.25 * relax, 0.05)   # damp a diverging sweep
        prev_change = change

    if not converged:
        raise StepFailure(f"Picard loop did not converge within {opts.picard_max} "
                          f"sweeps; relative updates {['%.2e' % c for c in history[-5:]]}",
                          history=history)

    new_state = State(v_it, p_it, m_it, phi_it, mu_it)
    e_after = total_energy(new_state, params)
    diss = dissipation(new_state, state_k, params, opts.h)
    violation = max(0.0, e_after.total + opts.h * sum(diss) - e_before.total)
    report = StepReport(
        picard_iters=len(history),
        picard_residual=history[-1],
        newton_iters={"magnetization": newton_m, "cahn_hilliard": newton_ch},
        energy_before=e_before,
        energy_after=e_after,
        dissipation=diss,
        energy_violation=violation,
        saturation_flag=mat.is_saturated(phi_it.values),
        mass_drift=abs(mass(phi_it) - mass(state_k.phi)),
        max_div=float(np.max(np.abs(div_face(v_it).values))),
    )
    if opts.strict_energy:
        tol_e = opts.tol_energy_rel * max(e_before.total, 1e-12)
        if violation > tol_e:
            raise StepFailure(f"energy violation {violation:.3e} exceeds tolerance "
                              f"{tol_e:.3e}", history=history)
    return new_state, report


def run(initial: State, params: mat.Params, opts: StepOptions, n_steps: int,
        sinks=None) -> State:
    """Advance n_steps steps, emitting one report per step through the sinks.

    ``sinks`` may define on_report(step_index, time, state, report) and
    on_failure(step_index, error). The cumulative energy ledger
    E(t_n) + sum_k h * dissipation_k <= E(0) + n * tol is monitored; the rows
    for a full ledger check are assembled by the diagnostics module.
    """
    if n_steps < 1:
        raise ValueError("n_steps must be >= 1")
    state = initial
    for k in range(1, n_steps + 1):
        try:
            state, report = step(state, params, opts)
        except (StepFailure, SolverFailure) as err:
            if sinks is not None and hasattr(sinks, "on_failure"):
                sinks.on_failure(k, err)
            raise
        if sinks is not None and hasattr(sinks, "on_report"):
            sinks.on_report(k, k * opts.h, state, report)
    return state
