"""Iterative linear solvers: Krylov core, Neumann Poisson, Leray projection.

All solvers are built on one preconditioned conjugate-residual Krylov core
(the minimal-residual variant of CG for self-adjoint positive operators).
Its residual norm in the preconditioned inner product is non-increasing by
construction, which the solver invariants assert. The core accepts a custom
inner product so that operators that are self-adjoint only in a weighted
metric (as in the Cahn-Hilliard Newton systems) reuse the same machinery.

Nullspace handling for the all-Neumann problems is explicit: right-hand
sides are mean-corrected and solutions are returned in the zero-mean gauge.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .grid import FaceField, Grid, ScalarField, div_face, grad_cc


class SolverFailure(RuntimeError):
    """Raised when an iterative solve does not reach its tolerance."""

    def __init__(self, message, residual=None, iterations=None):
        super().__init__(message)
        self.residual = residual
        self.iterations = iterations


@dataclass
class SolverOptions:
    """Controls for the iterative solvers."""

    tol_rel: float = 1e-10
    max_iters: int = 20000
    preconditioner: str = "diagonal"   # "none" | "diagonal"

    def __post_init__(self):
        if not self.tol_rel > 0:
            raise ValueError("tol_rel must be > 0")
        if self.max_iters < 1:
            raise ValueError("max_iters must be >= 1")
        if self.preconditioner not in ("none", "diagonal"):
            raise ValueError(f"unknown preconditioner {self.preconditioner!r}")


@dataclass
class KrylovInfo:
    iterations: int
    residual: float            # final relative residual (preconditioned norm)
    residual_history: list = field(default_factory=list)
    converged: bool = False


def conjugate_residual(apply_op, b, x0=None, tol_rel=1e-10, max_iters=20000,
                       precond=None, dot=None, atol=0.0):
    """Minimal-residual conjugate-direction iteration for SPD-like operators.

    ``apply_op`` must be self-adjoint and positive w.r.t. the inner product
    ``dot`` (Euclidean by default). ``precond`` applies an SPD approximate
    inverse. The iteration minimizes the residual in the preconditioned
    metric, so the recorded residual history is monotonically non-increasing.
    ``atol`` additionally stops the iteration once the plain Euclidean
    residual norm drops below it (useful when the right-hand side itself is
    at round-off scale).
    """
    b = np.asarray(b, dtype=float)
    if dot is None:
        def dot(p, q):
            return float(np.dot(p.ravel(), q.ravel()))
    if precond is None:
        def precond(r):
            return r.copy()   # fresh array: callers update r and z in place

    x = np.zeros_like(b) if x0 is None else np.array(x0, dtype=float, copy=True)
    r = b - apply_op(x)
    z = precond(r)
    norm_b = np.sqrt(max(dot(precond(b), b), 0.0))
    info = KrylovInfo(iterations=0, residual=0.0)
    if norm_b == 0.0:
        info.converged = True
        info.residual_history.append(0.0)
        return np.zeros_like(b), info

    res = np.sqrt(max(dot(z, r), 0.0)) / norm_b
    info.residual_history.append(res)
    if res <= tol_rel or (atol > 0.0 and float(np.linalg.norm(r)) <= atol):
        info.converged = True
        info.residual = res
        return x, info

    p = z.copy()
    az = apply_op(z)
    ap = az.copy()
    rho = dot(z, az)
    for it in range(1, max_iters + 1):
        map_ = precond(ap)
        denom = dot(map_, ap)
        if denom <= 0.0 or not np.isfinite(denom):
            break
        alpha = rho / denom
        x += alpha * p
        r -= alpha * ap
        z -= alpha * map_
        az = apply_op(z)
        rho_new = dot(z, az)
        res = np.sqrt(max(dot(z, r), 0.0)) / norm_b
        info.iterations = it
        info.residual_history.append(res)
        info.residual = res
        if res <= tol_rel or (atol > 0.0 and float(np.linalg.norm(r)) <= atol):
            info.converged = True
            return x, info
        beta = rho_new / rho if rho != 0.0 else 0.0
        rho = rho_new
        p = z + beta * p
        ap = az + beta * ap
    info.residual = res
    return x, info


def minres(apply_op, b, x0=None, tol_rel=1e-10, max_iters=20000, precond=None):
    """Preconditioned MINRES for symmetric (possibly indefinite) operators.

    ``precond`` must apply an SPD approximate inverse. The tracked quantity
    is the residual norm in the preconditioned metric, which MINRES
    minimizes over the Krylov space, so it is non-increasing.
    """
    b = np.asarray(b, dtype=float)
    if precond is None:
        def precond(r):
            return r.copy()
    x = np.zeros_like(b) if x0 is None else np.array(x0, dtype=float, copy=True)
    r = b - apply_op(x)
    z = precond(r)
    gamma_cur = np.sqrt(max(float(np.dot(z, r)), 0.0))
    info = KrylovInfo(iterations=0, residual=0.0)
    if gamma_cur == 0.0:
        info.converged = True
        info.residual_history.append(0.0)
        return x, info
    norm0 = np.sqrt(max(float(np.dot(precond(b), b)), 1e-300))
    eta = gamma_cur
    s_old = s_new = 0.0
    c_old = c_new = 1.0
    v_prev = np.zeros_like(b)
    v_cur = r
    z_cur = z
    gamma_prev = 1.0
    w = np.zeros_like(b)
    w_old = np.zeros_like(b)
    info.residual_history.append(gamma_cur / norm0)
    if gamma_cur / norm0 <= tol_rel:
        info.converged = True
        info.residual = gamma_cur / norm0
        return x, info

    for it in range(1, max_iters + 1):
        zj = z_cur / gamma_cur
        az = apply_op(zj)
        delta = float(np.dot(az, zj))
        v_next = az - (delta / gamma_cur) * v_cur - (gamma_cur / gamma_prev) * v_prev
        z_next = precond(v_next)
        gamma_next = np.sqrt(max(float(np.dot(z_next, v_next)), 0.0))
        a0 = c_new * delta - c_old * s_new * gamma_cur
        a1 = np.sqrt(a0 ** 2 + gamma_next ** 2)
        a2 = s_new * delta + c_old * c_new * gamma_cur
        a3 = s_old * gamma_cur
        if a1 == 0.0 or not np.isfinite(a1):
            break
        c_old, s_old = c_new, s_new
        c_new = a0 / a1
        s_new = gamma_next / a1
        w_new = (zj - a3 * w_old - a2 * w) / a1
        x += (c_new * eta) * w_new
        eta = -s_new * eta
        w_old, w = w, w_new
        v_prev, v_cur = v_cur, v_next
        z_cur = z_next
        gamma_prev, gamma_cur = gamma_cur, gamma_next
        rel = abs(eta) / norm0
        info.iterations = it
        info.residual_history.append(rel)
        info.residual = rel
        if rel <= tol_rel:
            info.converged = True
            return x, info
        if gamma_cur == 0.0:
            info.converged = True
            return x, info
    return x, info


def _mean(arr):
    return float(np.mean(arr))


def solve_poisson_neumann(rhs: ScalarField, opts: SolverOptions | None = None,
                          return_info: bool = False):
    """Solve laplace(s) = rhs - mean(rhs) with zero-mean gauge.

    The incompatible constant part of the right-hand side is removed and
    reported. Non-convergence raises SolverFailure carrying the residual.
    """
    if opts is None:
        opts = SolverOptions()
    g = rhs.grid
    correction = _mean(rhs.values)
    b = (rhs.values - correction).ravel()
    shape = (g.nx, g.ny)

    from .grid import laplace_raw

    def apply_op(x):
        # solve with -laplace (SPD on the zero-mean subspace)
        return -laplace_raw(x.reshape(shape), g.dx, g.dy).ravel()

    x, info = conjugate_residual(apply_op, -b, tol_rel=opts.tol_rel,
                                 max_iters=opts.max_iters)
    if not info.converged:
        raise SolverFailure(f"Neumann Poisson solve stalled at relative residual "
                            f"{info.residual:.3e} after {info.iterations} iterations",
                            residual=info.residual, iterations=info.iterations)
    vals = x.reshape(shape)
    vals = vals - np.mean(vals)
    out = ScalarField(g, vals)
    if return_info:
        return out, {"mean_correction": correction, "iterations": info.iterations,
                     "residual": info.residual, "history": info.residual_history}
    return out


def leray_project(f: FaceField, opts: SolverOptions | None = None):
    """Project a face field onto the discretely divergence-free subspace.

    Returns (f - grad p, p) where p solves the Neumann problem with
    right-hand side div(f); p carries the zero-mean gauge.
    """
    if opts is None:
        opts = SolverOptions()
    g = f.grid
    p = solve_poisson_neumann(div_face(f), opts)
    gp = grad_cc(p)
    out = FaceField(g, f.u - gp.u, f.v - gp.v)
    return out, p


def solve_elliptic_vc(coeff: ScalarField, shift: float, rhs: ScalarField,
                      opts: SolverOptions | None = None) -> ScalarField:
    """Solve (shift I - div(coeff grad)) s = rhs with the Neumann closure.

    ``coeff`` is a positive cell field, interpolated to faces arithmetically.
    With shift = 0 the operator annihilates constants, so the right-hand side
    must be mean-free; the solution is then returned in the zero-mean gauge.
    """
    if opts is None:
        opts = SolverOptions(tol_rel=1e-9)
    g = rhs.grid
    cmin = float(np.min(coeff.values))
    if not cmin > 0:
        raise ValueError(f"elliptic coefficient must be positive, min = {cmin}")
    if shift < 0:
        raise ValueError("shift must be >= 0")
    zero_shift = shift == 0.0
    b = rhs.values.ravel()
    if zero_shift:
        m = _mean(rhs.values)
        scale = float(np.max(np.abs(b))) or 1.0
        if abs(m) > 1e-12 * scale:
            raise SolverFailure(f"shift = 0 requires a mean-free right-hand side, "
                                f"got mean {m:.3e}")
        b = b - m

    from .grid import avg_to_face  # local import to keep module tops light
    cf = avg_to_face(coeff)
    shape = (g.nx, g.ny)

    def apply_op(x):
        s = ScalarField(g, x.reshape(shape))
        gs = grad_cc(s)
        flux = FaceField(g, cf.u * gs.u, cf.v * gs.v)
        return shift * x - div_face(flux).values.ravel()

    precond = None
    if opts.preconditioner == "diagonal":
        diag = np.full(shape, shift)
        diag[1:, :] += cf.u[1:-1, :] / g.dx ** 2
        diag[:-1, :] += cf.u[1:-1, :] / g.dx ** 2
        diag[:, 1:] += cf.v[:, 1:-1] / g.dy ** 2
        diag[:, :-1] += cf.v[:, 1:-1] / g.dy ** 2
        if zero_shift:
            diag += 1e-300  # keep strictly positive; constants handled by gauge
        dflat = diag.ravel()

        def precond(r):
            return r / dflat

    x, info = conjugate_residual(apply_op, b, tol_rel=opts.tol_rel,
                                 max_iters=opts.max_iters, precond=precond)
    if not info.converged:
        raise SolverFailure(f"variable-coefficient elliptic solve stalled at relative "
                            f"residual {info.residual:.3e} after {info.iterations} iterations",
                            residual=info.residual, iterations=info.iterations)
    vals = x.reshape(shape)
    if zero_shift:
        vals = vals - np.mean(vals)
    return ScalarField(g, vals)
