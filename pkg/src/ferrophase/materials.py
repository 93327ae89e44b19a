"""Constitutive closures and the convex-splitting algebra.

Material laws for the two-fluid magnetic mixture: the exchange coefficient
and viscosity blend logistically between the pure-phase constants, the mean
density is affine in the order parameter, and the mixing energy is the
logarithmic (entropy) potential

    Psi(s) = (a/2) [(1+s) ln(1+s) + (1-s) ln(1-s)] - (b/2) s^2 .

The time discretization splits Psi into the convex part

    Psi0(s) = Psi(s) + (kappa/2) s^2 ,   kappa >= b - a,

whose derivative is treated implicitly, plus the concave quadratic handled
by the midpoint rule. ``h0`` is the secant slope of the exchange coefficient
between two phase values; it makes the discrete chain rule for xi(phi)
exact, which the per-step energy estimate needs. ``lemma41_gap`` evaluates
the slack in the algebraic inequality that controls the convex-split cubic
magnetization term.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

#: iterates are confined to |s| <= 1 - SATURATION_EPS; the continuous
#: solution stays strictly inside (-1, 1), the guard only protects floats.
SATURATION_EPS = 1e-12

#: below this |a-b| the secant slope of xi switches to the exact derivative.
H0_SWITCH = 1e-10


@dataclass
class Params:
    """Physical constants and material-law parameters.

    kappa defaults to b, which makes the convex part of the potential the
    pure entropy term. Any kappa >= b - a keeps it convex.
    """

    eta: float = 5e-3          # interface-thickness coefficient (> 0)
    alpha: float = 1.0         # magnetization saturation penalty (> 0)
    a: float = 1.0             # logarithmic potential coefficient (> 0)
    b: float = 2.0             # quadratic potential coefficient (> 0)
    kappa: float | None = None  # convexification shift, default b
    xi1: float = 1.0           # exchange constant, fluid 1 (> 0)
    xi2: float = 1.5           # exchange constant, fluid 2 (> 0)
    eta_blend: float = 0.25    # width of the regularized Heaviside blend (> 0)
    nu1: float = 0.25          # viscosity, fluid 1 (> 0)
    nu2: float = 0.5           # viscosity, fluid 2 (> 0)
    rho1: float = 1.0          # specific density, fluid 1 (> 0)
    rho2: float = 2.0          # specific density, fluid 2 (> 0)

    def __post_init__(self):
        if self.kappa is None:
            self.kappa = self.b
        for name in ("eta", "alpha", "a", "b", "xi1", "xi2", "eta_blend",
                     "nu1", "nu2", "rho1", "rho2"):
            if not getattr(self, name) > 0:
                raise ValueError(f"params.{name} must be > 0, got {getattr(self, name)}")
        if self.kappa < self.b - self.a:
            raise ValueError(f"params.kappa must be >= b - a = {self.b - self.a} "
                             f"to keep the split potential convex, got {self.kappa}")

    @property
    def c1(self) -> float:
        """Lower bound of the exchange coefficient."""
        return min(self.xi1, self.xi2)

    @property
    def c2(self) -> float:
        """Upper bound of the exchange coefficient."""
        return max(self.xi1, self.xi2)

    @property
    def c3(self) -> float:
        """Upper bound of |xi'| (max slope of the logistic blend)."""
        return abs(self.xi2 - self.xi1) / (4.0 * self.eta_blend)


def _sigmoid(x):
    x = np.asarray(x, dtype=float)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def xi(phi, params: Params):
    """Exchange coefficient: logistic blend between xi1 and xi2."""
    s = _sigmoid(np.asarray(phi, dtype=float) / params.eta_blend)
    return params.xi1 + (params.xi2 - params.xi1) * s


def xi_prime(phi, params: Params):
    """Exact derivative of the logistic exchange blend."""
    s = _sigmoid(np.asarray(phi, dtype=float) / params.eta_blend)
    return (params.xi2 - params.xi1) * s * (1.0 - s) / params.eta_blend


def xi_second(phi, params: Params):
    """Second derivative of the blend (used by the quasi-Newton secant slope)."""
    s = _sigmoid(np.asarray(phi, dtype=float) / params.eta_blend)
    return (params.xi2 - params.xi1) * s * (1.0 - s) * (1.0 - 2.0 * s) / params.eta_blend ** 2


def nu(phi, params: Params):
    """Viscosity: the same logistic blend between nu1 and nu2."""
    s = _sigmoid(np.asarray(phi, dtype=float) / params.eta_blend)
    return params.nu1 + (params.nu2 - params.nu1) * s


def rho(phi, params: Params):
    """Mean mass density, affine in the order parameter."""
    phi = np.asarray(phi, dtype=float)
    return 0.5 * (params.rho1 + params.rho2) + 0.5 * (params.rho2 - params.rho1) * phi


def h0(a_val, b_val, params: Params):
    """Secant slope of xi between two phase values.

    Symmetric under argument swap; switches to xi' at the midpoint once the
    difference quotient would be numerically unstable.
    """
    av = np.asarray(a_val, dtype=float)
    bv = np.asarray(b_val, dtype=float)
    diff = av - bv
    near = np.abs(diff) < H0_SWITCH
    safe = np.where(near, 1.0, diff)
    quot = (xi(av, params) - xi(bv, params)) / safe
    mid = xi_prime(0.5 * (av + bv), params)
    out = np.where(near, mid, quot)
    if out.ndim == 0:
        return float(out)
    return out


def h0_dphi(a_val, b_val, params: Params):
    """Derivative of h0(a, b) with respect to its first argument."""
    av = np.asarray(a_val, dtype=float)
    bv = np.asarray(b_val, dtype=float)
    diff = av - bv
    near = np.abs(diff) < H0_SWITCH
    safe = np.where(near, 1.0, diff)
    quot = (xi_prime(av, params) * diff - (xi(av, params) - xi(bv, params))) / safe ** 2
    mid = 0.5 * xi_second(av, params)
    out = np.where(near, mid, quot)
    if out.ndim == 0:
        return float(out)
    return out


def _check_range(s, limit=1.0):
    if np.any(np.abs(s) > limit):
        raise ValueError(f"order parameter out of range: max |s| = {np.max(np.abs(s))}")


def psi(s, params: Params):
    """Logarithmic mixing energy density; accepts |s| <= 1 with limit values at +-1."""
    s = np.asarray(s, dtype=float)
    _check_range(s)
    sp = 1.0 + s
    sm = 1.0 - s
    with np.errstate(divide="ignore", invalid="ignore"):
        t = np.where(sp > 0, sp * np.log(np.maximum(sp, 1e-300)), 0.0) \
            + np.where(sm > 0, sm * np.log(np.maximum(sm, 1e-300)), 0.0)
    out = 0.5 * params.a * t - 0.5 * params.b * s ** 2
    if out.ndim == 0:
        return float(out)
    return out


def psi0(s, params: Params):
    """Convex split part Psi0(s) = Psi(s) + (kappa/2) s^2."""
    s = np.asarray(s, dtype=float)
    out = psi(s, params) + 0.5 * params.kappa * s ** 2
    if np.ndim(out) == 0:
        return float(out)
    return out


def _clamp_sat(s):
    return np.clip(s, -1.0 + SATURATION_EPS, 1.0 - SATURATION_EPS)


def is_saturated(s) -> bool:
    """True when any entry sits in the saturation guard band |s| >= 1 - eps."""
    return bool(np.any(np.abs(np.asarray(s)) >= 1.0 - SATURATION_EPS))


def psi0_prime(s, params: Params):
    """Derivative of the convex split part; clamped inside the guard band.

    For kappa = b this is (a/2) ln((1+s)/(1-s)). Evaluations with
    |s| >= 1 - eps use the clamped argument (callers detect the band via
    ``is_saturated``); |s| > 1 is a hard error.
    """
    s = np.asarray(s, dtype=float)
    _check_range(s)
    sc = _clamp_sat(s)
    out = 0.5 * params.a * (np.log1p(sc) - np.log1p(-sc)) + (params.kappa - params.b) * sc
    if out.ndim == 0:
        return float(out)
    return out


def psi0_second(s, params: Params):
    """Second derivative of the convex split part, a/(1-s^2) + (kappa - b)."""
    s = np.asarray(s, dtype=float)
    _check_range(s)
    sc = _clamp_sat(s)
    out = params.a / (1.0 - sc ** 2) + (params.kappa - params.b)
    if out.ndim == 0:
        return float(out)
    return out


def cubic_split(m_new, m_old):
    """Convex-split cubic magnetization term |m_new|^2 m_new - m_old.

    Component axis first: inputs of shape (3, ...) or length-3 vectors.
    """
    m_new = np.asarray(m_new, dtype=float)
    m_old = np.asarray(m_old, dtype=float)
    mag2 = np.sum(m_new ** 2, axis=0)
    return mag2[None, ...] * m_new - m_old


def lemma41_gap(a_vec, b_vec):
    """Slack (RHS - LHS) of the convex-splitting inequality for 3-vectors.

    Vectorized over trailing axes when inputs have shape (3, ...). The gap is
    nonnegative for all real inputs, which is what makes the split cubic term
    dissipative regardless of the step size.
    """
    a = np.asarray(a_vec, dtype=float)
    b = np.asarray(b_vec, dtype=float)
    a2 = np.sum(a ** 2, axis=0)
    b2 = np.sum(b ** 2, axis=0)
    amb = a - b
    lhs = 0.25 * (a2 - 1.0) ** 2 - 0.25 * (b2 - 1.0) ** 2 + 0.25 * (a2 - b2) ** 2 \
        + 0.5 * np.sum(a * amb, axis=0) ** 2 + 0.5 * np.sum(amb ** 2, axis=0)
    rhs = np.sum(amb * (a2[None, ...] * a - b), axis=0)
    out = rhs - lhs
    if out.ndim == 0:
        return float(out)
    return out
