"""Uniform 2D staggered (MAC) grid and the discrete differential operators.

Layout for an ``nx`` by ``ny`` grid over the rectangle [0, lx] x [0, ly]:

  cell centers   (i, j)  at x = (i+0.5)*dx, y = (j+0.5)*dy   shape (nx,   ny)
  u-faces        (i, j)  at x = i*dx,       y = (j+0.5)*dy   shape (nx+1, ny)
  v-faces        (i, j)  at x = (i+0.5)*dx, y = j*dy         shape (nx,   ny+1)
  corners        (i, j)  at x = i*dx,       y = j*dy         shape (nx+1, ny+1)

All scalars (order parameter, chemical potential, pressure, magnetization
components) live at cell centers; velocity components live on faces.

Boundary closures bake in the physical boundary conditions: gradients of
cell fields are zero on boundary-normal faces (homogeneous Neumann) and
velocity fields carry hard zeros on boundary-normal faces (no penetration).
Tangential no-slip enters only through the viscous operator, which uses
one-sided half-cell differences at walls.

The operator family below is built so that the discrete analogues of the
integration-by-parts identities used by the per-step energy estimate hold
exactly in exact arithmetic:

  * ``grad_cc`` and ``-div_face`` are adjoint (summation by parts),
  * ``advect_scalar`` is conservative, so its cell sum telescopes to zero,
  * ``advect_velocity`` pairs to exactly zero against the advected field,
  * ``viscous_apply`` is the assembled gradient of the quadratic form
    ``viscous_form``, hence symmetric positive semi-definite.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class Grid:
    """Geometry of a uniform rectangular MAC grid."""

    nx: int
    ny: int
    lx: float
    ly: float

    def __post_init__(self):
        if self.nx < 2 or self.ny < 2:
            raise ValueError(f"grid needs at least 2 cells per axis, got {self.nx}x{self.ny}")
        if not (self.lx > 0 and self.ly > 0):
            raise ValueError(f"domain edges must be positive, got lx={self.lx}, ly={self.ly}")

    @property
    def dx(self) -> float:
        return self.lx / self.nx

    @property
    def dy(self) -> float:
        return self.ly / self.ny

    @property
    def cell_volume(self) -> float:
        return self.dx * self.dy

    @property
    def volume(self) -> float:
        return self.lx * self.ly

    def cell_centers(self):
        """Coordinate arrays (x, y), each of shape (nx, ny)."""
        x = (np.arange(self.nx) + 0.5) * self.dx
        y = (np.arange(self.ny) + 0.5) * self.dy
        return np.meshgrid(x, y, indexing="ij")

    def corner_coords(self):
        """Coordinate arrays (x, y) at cell corners, each (nx+1, ny+1)."""
        x = np.arange(self.nx + 1) * self.dx
        y = np.arange(self.ny + 1) * self.dy
        return np.meshgrid(x, y, indexing="ij")


def build_grid(nx: int, ny: int, lx: float, ly: float) -> Grid:
    """Validate sizes and construct a Grid."""
    return Grid(int(nx), int(ny), float(lx), float(ly))


def _check_finite(name, arr):
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite entries")


@dataclass
class ScalarField:
    """One real value per cell center."""

    grid: Grid
    values: np.ndarray  # (nx, ny)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape != (self.grid.nx, self.grid.ny):
            raise ValueError(f"scalar field shape {self.values.shape} does not match grid "
                             f"({self.grid.nx}, {self.grid.ny})")
        _check_finite("scalar field", self.values)

    @classmethod
    def zeros(cls, grid: Grid) -> "ScalarField":
        return cls(grid, np.zeros((grid.nx, grid.ny)))

    @classmethod
    def full(cls, grid: Grid, value: float) -> "ScalarField":
        return cls(grid, np.full((grid.nx, grid.ny), float(value)))

    def copy(self) -> "ScalarField":
        return ScalarField(self.grid, self.values.copy())


@dataclass
class FaceField:
    """Vector field on cell faces: u on vertical faces, v on horizontal faces."""

    grid: Grid
    u: np.ndarray  # (nx+1, ny)
    v: np.ndarray  # (nx, ny+1)

    def __post_init__(self):
        g = self.grid
        self.u = np.asarray(self.u, dtype=float)
        self.v = np.asarray(self.v, dtype=float)
        if self.u.shape != (g.nx + 1, g.ny) or self.v.shape != (g.nx, g.ny + 1):
            raise ValueError(f"face field shapes {self.u.shape}/{self.v.shape} do not match grid")
        _check_finite("face field", self.u)
        _check_finite("face field", self.v)

    @classmethod
    def zeros(cls, grid: Grid) -> "FaceField":
        return cls(grid, np.zeros((grid.nx + 1, grid.ny)), np.zeros((grid.nx, grid.ny + 1)))

    def copy(self) -> "FaceField":
        return FaceField(self.grid, self.u.copy(), self.v.copy())

    def max_boundary_normal(self) -> float:
        """Largest |value| on boundary-normal faces (must be 0 for velocities)."""
        return max(np.abs(self.u[0, :]).max(), np.abs(self.u[-1, :]).max(),
                   np.abs(self.v[:, 0]).max(), np.abs(self.v[:, -1]).max())

    def is_no_slip(self, tol: float = 0.0) -> bool:
        return self.max_boundary_normal() <= tol


@dataclass
class MagField:
    """Three cell-centered magnetization components (3D vector on a 2D grid)."""

    grid: Grid
    values: np.ndarray  # (3, nx, ny)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape != (3, self.grid.nx, self.grid.ny):
            raise ValueError(f"magnetization shape {self.values.shape} does not match grid")
        _check_finite("magnetization", self.values)

    @classmethod
    def zeros(cls, grid: Grid) -> "MagField":
        return cls(grid, np.zeros((3, grid.nx, grid.ny)))

    @classmethod
    def uniform(cls, grid: Grid, direction) -> "MagField":
        d = np.asarray(direction, dtype=float)
        vals = np.zeros((3, grid.nx, grid.ny))
        for c in range(3):
            vals[c] = d[c]
        return cls(grid, vals)

    def copy(self) -> "MagField":
        return MagField(self.grid, self.values.copy())

    def component(self, c: int) -> ScalarField:
        return ScalarField(self.grid, self.values[c])

    def magnitude_sq(self) -> np.ndarray:
        return np.sum(self.values ** 2, axis=0)


# ---------------------------------------------------------------------------
# inner products and reductions (all weighted by the cell volume dx*dy)

def cell_inner(a: np.ndarray, b: np.ndarray, grid: Grid) -> float:
    return float(np.sum(a * b)) * grid.cell_volume


def cell_sum(a: np.ndarray, grid: Grid) -> float:
    return float(np.sum(a)) * grid.cell_volume


def face_inner(f: FaceField, g: FaceField) -> float:
    w = f.grid.cell_volume
    return (float(np.sum(f.u * g.u)) + float(np.sum(f.v * g.v))) * w


def face_norm(f: FaceField) -> float:
    return np.sqrt(face_inner(f, f))


def cell_norm(a: np.ndarray, grid: Grid) -> float:
    return float(np.sqrt(cell_inner(a, a, grid)))


# ---------------------------------------------------------------------------
# first-order operators

def laplace_raw(a: np.ndarray, dx: float, dy: float) -> np.ndarray:
    """Neumann 5-point Laplacian on a raw (nx, ny) array; solver hot path."""
    out = np.zeros_like(a)
    tx = np.diff(a, axis=0) / (dx * dx)
    out[:-1, :] += tx
    out[1:, :] -= tx
    ty = np.diff(a, axis=1) / (dy * dy)
    out[:, :-1] += ty
    out[:, 1:] -= ty
    return out


def vc_laplace_raw(a: np.ndarray, cu_in: np.ndarray, cv_in: np.ndarray,
                   dx: float, dy: float) -> np.ndarray:
    """div(c grad a) with interior face coefficients cu_in (nx-1, ny) and
    cv_in (nx, ny-1); Neumann closure. Raw-array solver hot path."""
    out = np.zeros_like(a)
    tx = cu_in * np.diff(a, axis=0) / (dx * dx)
    out[:-1, :] += tx
    out[1:, :] -= tx
    ty = cv_in * np.diff(a, axis=1) / (dy * dy)
    out[:, :-1] += ty
    out[:, 1:] -= ty
    return out


def grad_cc(s: ScalarField) -> FaceField:
    """Centered gradient of a cell field onto faces; zero on boundary-normal faces.

    The zero closure realizes the homogeneous Neumann condition carried by
    every cell-centered unknown.
    """
    g = s.grid
    a = s.values
    gu = np.zeros((g.nx + 1, g.ny))
    gv = np.zeros((g.nx, g.ny + 1))
    gu[1:-1, :] = (a[1:, :] - a[:-1, :]) / g.dx
    gv[:, 1:-1] = (a[:, 1:] - a[:, :-1]) / g.dy
    return FaceField(g, gu, gv)


def div_face(f: FaceField) -> ScalarField:
    """Conservative cell-wise flux balance divided by the cell volume."""
    g = f.grid
    d = (f.u[1:, :] - f.u[:-1, :]) / g.dx + (f.v[:, 1:] - f.v[:, :-1]) / g.dy
    return ScalarField(g, d)


def laplace_neumann(s: ScalarField) -> ScalarField:
    """div(grad(s)) with the Neumann closure; symmetric negative semi-definite."""
    return div_face(grad_cc(s))


def avg_to_face(s: ScalarField) -> FaceField:
    """Arithmetic cell-to-face average; one-sided copy on boundary faces."""
    g = s.grid
    a = s.values
    au = np.empty((g.nx + 1, g.ny))
    av = np.empty((g.nx, g.ny + 1))
    au[1:-1, :] = 0.5 * (a[1:, :] + a[:-1, :])
    au[0, :] = a[0, :]
    au[-1, :] = a[-1, :]
    av[:, 1:-1] = 0.5 * (a[:, 1:] + a[:, :-1])
    av[:, 0] = a[:, 0]
    av[:, -1] = a[:, -1]
    return FaceField(g, au, av)


def face_sq_to_center(f: FaceField) -> np.ndarray:
    """Average of u^2 and v^2 from faces to centers: |f|^2 at cells.

    With zero boundary-normal values this center quadrature of |f|^2 against
    any cell weight equals the face quadrature against the face-averaged
    weight exactly, which is what the discrete energy bookkeeping relies on.
    """
    uu = f.u ** 2
    vv = f.v ** 2
    return 0.5 * (uu[1:, :] + uu[:-1, :]) + 0.5 * (vv[:, 1:] + vv[:, :-1])


def grad_sq_center(s: ScalarField) -> np.ndarray:
    """|grad s|^2 averaged to cell centers."""
    return face_sq_to_center(grad_cc(s))


# ---------------------------------------------------------------------------
# advection

def advect_scalar(vel: FaceField, s: ScalarField) -> ScalarField:
    """Conservative transport term div(vel * s_face) with centered face averages.

    For discretely divergence-free vel this is a consistent discretization of
    (vel . grad)s, and its cell sum telescopes exactly to the boundary normal
    flux (zero for no-slip advecting fields).
    """
    g = vel.grid
    sbar = avg_to_face(s)
    flux = FaceField(g, vel.u * sbar.u, vel.v * sbar.v)
    return div_face(flux)


def _momentum_advection(m: FaceField, w: FaceField) -> FaceField:
    """Skew advection of face field ``w`` by the mass flux ``m``.

    Computes  Div(F wbar) - 0.5 * w * Div(F)  on each velocity control
    volume, where F are the centered averages of ``m`` onto the momentum CV
    faces. The pairing <output, w> vanishes exactly for any mass flux with
    zero boundary-normal entries and any no-slip w, which is the discrete
    counterpart of the energy neutrality of div(rho v (x) v) - (v.grad rho) v/2
    and of (div J) v/2 + (J.grad) v.
    """
    g = m.grid
    nx, ny, dx, dy = g.nx, g.ny, g.dx, g.dy
    out_u = np.zeros((nx + 1, ny))
    out_v = np.zeros((nx, ny + 1))

    # --- u-momentum control volumes (interior u-faces i = 1..nx-1) ---
    # x-flux through cell centers, y-flux through corners.
    fx = 0.5 * (m.u[:-1, :] + m.u[1:, :])            # (nx, ny) at cell centers
    ubar_x = 0.5 * (w.u[:-1, :] + w.u[1:, :])        # (nx, ny)
    fy = np.zeros((nx + 1, ny + 1))                  # at corners
    fy[1:nx, 1:ny] = 0.5 * (m.v[:nx - 1, 1:ny] + m.v[1:nx, 1:ny])
    ubar_y = np.zeros((nx + 1, ny + 1))
    ubar_y[:, 1:ny] = 0.5 * (w.u[:, :ny - 1] + w.u[:, 1:ny])

    flux_form = (fx[1:, :] * ubar_x[1:, :] - fx[:-1, :] * ubar_x[:-1, :]) / dx \
        + (fy[1:nx, 1:] * ubar_y[1:nx, 1:] - fy[1:nx, :-1] * ubar_y[1:nx, :-1]) / dy
    div_m = (fx[1:, :] - fx[:-1, :]) / dx + (fy[1:nx, 1:] - fy[1:nx, :-1]) / dy
    out_u[1:-1, :] = flux_form - 0.5 * w.u[1:-1, :] * div_m

    # --- v-momentum control volumes (interior v-faces j = 1..ny-1) ---
    fy_c = 0.5 * (m.v[:, :-1] + m.v[:, 1:])          # (nx, ny) at cell centers
    vbar_y = 0.5 * (w.v[:, :-1] + w.v[:, 1:])        # (nx, ny)
    fx_n = np.zeros((nx + 1, ny + 1))                # at corners
    fx_n[1:nx, 1:ny] = 0.5 * (m.u[1:nx, :ny - 1] + m.u[1:nx, 1:ny])
    vbar_x = np.zeros((nx + 1, ny + 1))
    vbar_x[1:nx, :] = 0.5 * (w.v[:nx - 1, :] + w.v[1:nx, :])

    flux_form_v = (fy_c[:, 1:] * vbar_y[:, 1:] - fy_c[:, :-1] * vbar_y[:, :-1]) / dy \
        + (fx_n[1:, 1:ny] * vbar_x[1:, 1:ny] - fx_n[:-1, 1:ny] * vbar_x[:-1, 1:ny]) / dx
    div_m_v = (fy_c[:, 1:] - fy_c[:, :-1]) / dy + (fx_n[1:, 1:ny] - fx_n[:-1, 1:ny]) / dx
    out_v[:, 1:-1] = flux_form_v - 0.5 * w.v[:, 1:-1] * div_m_v

    return FaceField(g, out_u, out_v)


def advect_velocity(rho_face: FaceField, vel_adv: FaceField, vel: FaceField) -> FaceField:
    """Momentum advection div(rho vel_adv (x) vel) in exactly energy-neutral form.

    ``rho_face`` carries the face-interpolated density; the mass flux is the
    pointwise product rho_face * vel_adv. The discrete pairing of the output
    against ``vel`` is exactly zero for any positive density and no-slip
    fields, mirroring the continuous identity that makes the convection term
    drop out of the kinetic energy balance.
    """
    g = rho_face.grid
    m = FaceField(g, rho_face.u * vel_adv.u, rho_face.v * vel_adv.v)
    return _momentum_advection(m, vel)


def advect_by_flux(mass_flux: FaceField, vel: FaceField) -> FaceField:
    """Skew transport of ``vel`` by a raw face mass flux (used for the J terms)."""
    return _momentum_advection(mass_flux, vel)


# ---------------------------------------------------------------------------
# viscous operator: assembled from the quadratic dissipation form

def _corner_average(c: np.ndarray) -> np.ndarray:
    """Average a cell array to corners (2 or 1 neighbors at edges/corners)."""
    p = np.pad(c, 1, mode="edge")
    return 0.25 * (p[:-1, :-1] + p[1:, :-1] + p[:-1, 1:] + p[1:, 1:])


def _corner_weights(grid: Grid) -> np.ndarray:
    wx = np.full(grid.nx + 1, grid.dx)
    wx[0] = wx[-1] = 0.5 * grid.dx
    wy = np.full(grid.ny + 1, grid.dy)
    wy[0] = wy[-1] = 0.5 * grid.dy
    return wx[:, None] * wy[None, :]


def sym_grad(vel: FaceField):
    """Discrete symmetric gradient: (dxx, dyy) at centers, dxy at corners.

    Wall rows/columns use one-sided half-cell differences against the no-slip
    value 0, so tangential boundary friction is represented without ghosts.
    """
    g = vel.grid
    nx, ny, dx, dy = g.nx, g.ny, g.dx, g.dy
    dxx = (vel.u[1:, :] - vel.u[:-1, :]) / dx
    dyy = (vel.v[:, 1:] - vel.v[:, :-1]) / dy

    dudy = np.zeros((nx + 1, ny + 1))
    dudy[:, 1:ny] = (vel.u[:, 1:] - vel.u[:, :-1]) / dy
    dudy[:, 0] = 2.0 * vel.u[:, 0] / dy
    dudy[:, ny] = -2.0 * vel.u[:, -1] / dy

    dvdx = np.zeros((nx + 1, ny + 1))
    dvdx[1:nx, :] = (vel.v[1:, :] - vel.v[:-1, :]) / dx
    dvdx[0, :] = 2.0 * vel.v[0, :] / dx
    dvdx[nx, :] = -2.0 * vel.v[-1, :] / dx

    dxy = 0.5 * (dudy + dvdx)
    return dxx, dyy, dxy


def viscous_form(nu_cell: np.ndarray, a: FaceField, b: FaceField) -> float:
    """Bilinear dissipation form 2 * integral of nu D(a):D(b)."""
    g = a.grid
    axx, ayy, axy = sym_grad(a)
    bxx, byy, bxy = sym_grad(b)
    nu_n = _corner_average(nu_cell)
    w_n = _corner_weights(g)
    val = 2.0 * np.sum(nu_cell * (axx * bxx + ayy * byy)) * g.cell_volume
    val += 4.0 * np.sum(nu_n * axy * bxy * w_n)
    return float(val)


def viscous_apply(nu_cell: np.ndarray, vel: FaceField) -> FaceField:
    """Operator K with <K a, b> = viscous_form(nu, a, b); realizes -div(2 nu D(v)).

    Assembled as the adjoint chain of sym_grad against the form's weights, so
    symmetry and positive semi-definiteness hold to round-off by construction.
    Output is zero on boundary-normal faces (those degrees of freedom are
    locked to zero by no-slip).
    """
    g = vel.grid
    nx, ny, dx, dy = g.nx, g.ny, g.dx, g.dy
    vol = g.cell_volume
    dxx, dyy, dxy = sym_grad(vel)
    nu_n = _corner_average(nu_cell)
    w_n = _corner_weights(g)

    t_xx = 2.0 * nu_cell * dxx * vol          # cell weights against dxx(b)
    t_yy = 2.0 * nu_cell * dyy * vol
    s = 4.0 * nu_n * dxy * w_n * 0.5          # corner weights against (dudy+dvdx)/2

    ku = np.zeros((nx + 1, ny))
    kv = np.zeros((nx, ny + 1))

    # dxx(b)[I,j] = (b.u[I+1,j] - b.u[I,j])/dx
    ku[1:, :] += t_xx / dx
    ku[:-1, :] -= t_xx / dx
    # dyy(b)[i,J] = (b.v[i,J+1] - b.v[i,J])/dy
    kv[:, 1:] += t_yy / dy
    kv[:, :-1] -= t_yy / dy
    # dudy at interior corner rows J=1..ny-1: (u[:,J] - u[:,J-1])/dy
    ku[:, 1:] += s[:, 1:ny] / dy
    ku[:, :-1] -= s[:, 1:ny] / dy
    # dudy wall closures: 2u[:,0]/dy and -2u[:,ny-1]/dy
    ku[:, 0] += 2.0 * s[:, 0] / dy
    ku[:, -1] -= 2.0 * s[:, ny] / dy
    # dvdx at interior corner columns i=1..nx-1
    kv[1:, :] += s[1:nx, :] / dx
    kv[:-1, :] -= s[1:nx, :] / dx
    # dvdx wall closures
    kv[0, :] += 2.0 * s[0, :] / dx
    kv[-1, :] -= 2.0 * s[nx, :] / dx

    ku /= vol
    kv /= vol
    # boundary-normal faces are not unknowns
    ku[0, :] = 0.0
    ku[-1, :] = 0.0
    kv[:, 0] = 0.0
    kv[:, -1] = 0.0
    return FaceField(g, ku, kv)


def advect_raw(u: np.ndarray, v: np.ndarray, a: np.ndarray,
               dx: float, dy: float) -> np.ndarray:
    """Conservative transport div(vel * a_face) on raw arrays (no-slip vel)."""
    fx = u[1:-1, :] * 0.5 * (a[1:, :] + a[:-1, :])
    fy = v[:, 1:-1] * 0.5 * (a[:, 1:] + a[:, :-1])
    out = np.zeros_like(a)
    out[:-1, :] += fx / dx
    out[1:, :] -= fx / dx
    out[:, :-1] += fy / dy
    out[:, 1:] -= fy / dy
    return out


def make_viscous_raw(nu_cell: np.ndarray, grid: Grid):
    """Closure applying the viscous operator to raw (u, v) face arrays.

    Same stencil as viscous_apply with the coefficient products precomputed;
    boundary-normal outputs are zeroed (those degrees of freedom are locked).
    """
    g = grid
    nx, ny, dx, dy = g.nx, g.ny, g.dx, g.dy
    vol = g.cell_volume
    c_cell = 2.0 * nu_cell * vol
    c_corner = 2.0 * _corner_average(nu_cell) * _corner_weights(g)

    def apply(u, v):
        dxx = (u[1:, :] - u[:-1, :]) / dx
        dyy = (v[:, 1:] - v[:, :-1]) / dy
        s = np.empty((nx + 1, ny + 1))
        s[:, 1:ny] = (u[:, 1:] - u[:, :-1]) / dy
        s[:, 0] = 2.0 * u[:, 0] / dy
        s[:, ny] = -2.0 * u[:, -1] / dy
        s[1:nx, :] += (v[1:, :] - v[:-1, :]) / dx
        s[0, :] += 2.0 * v[0, :] / dx
        s[nx, :] += -2.0 * v[-1, :] / dx
        s *= 0.5
        s *= c_corner

        t_xx = c_cell * dxx
        t_yy = c_cell * dyy
        ku = np.zeros_like(u)
        kv = np.zeros_like(v)
        ku[1:, :] += t_xx / dx
        ku[:-1, :] -= t_xx / dx
        kv[:, 1:] += t_yy / dy
        kv[:, :-1] -= t_yy / dy
        ku[:, 1:] += s[:, 1:ny] / dy
        ku[:, :-1] -= s[:, 1:ny] / dy
        ku[:, 0] += 2.0 * s[:, 0] / dy
        ku[:, -1] -= 2.0 * s[:, ny] / dy
        kv[1:, :] += s[1:nx, :] / dx
        kv[:-1, :] -= s[1:nx, :] / dx
        kv[0, :] += 2.0 * s[0, :] / dx
        kv[-1, :] -= 2.0 * s[nx, :] / dx
        ku /= vol
        kv /= vol
        ku[0, :] = 0.0
        ku[-1, :] = 0.0
        kv[:, 0] = 0.0
        kv[:, -1] = 0.0
        return ku, kv

    return apply


def viscous_diag(nu_cell: np.ndarray, grid: Grid) -> FaceField:
    """Diagonal of viscous_apply, for Jacobi preconditioning."""
    g = grid
    nx, ny, dx, dy = g.nx, g.ny, g.dx, g.dy
    vol = g.cell_volume
    nu_n = _corner_average(nu_cell)
    w_n = _corner_weights(g)
    c2 = 4.0 * nu_n * w_n                      # corner coefficient of dxy^2

    du = np.zeros((nx + 1, ny))
    dv = np.zeros((nx, ny + 1))

    # from 2 nu dxx^2: u[i,j] appears in cells i-1 and i with coef 1/dx
    du[1:, :] += 2.0 * nu_cell * vol / dx ** 2
    du[:-1, :] += 2.0 * nu_cell * vol / dx ** 2
    dv[:, 1:] += 2.0 * nu_cell * vol / dy ** 2
    dv[:, :-1] += 2.0 * nu_cell * vol / dy ** 2

    # from c2 * dxy^2 with dxy = (dudy + dvdx)/2: each corner J contributes
    # c2 * (coef/2)^2 where coef is du/dy's dependence on the face value
    cu = np.zeros((nx + 1, ny + 1))            # (coef/2)^2 placed at corners
    cu[:, 1:ny] = (0.5 / dy) ** 2
    cu[:, 0] = (1.0 / dy) ** 2
    cu[:, ny] = (1.0 / dy) ** 2
    term = c2 * cu
    du += term[:, :ny] + term[:, 1:]           # corners J=j and J=j+1

    cv = np.zeros((nx + 1, ny + 1))
    cv[1:nx, :] = (0.5 / dx) ** 2
    cv[0, :] = (1.0 / dx) ** 2
    cv[nx, :] = (1.0 / dx) ** 2
    term_v = c2 * cv
    dv += term_v[:nx, :] + term_v[1:, :]

    du /= vol
    dv /= vol
    du[0, :] = du[-1, :] = 1.0
    dv[:, 0] = dv[:, -1] = 1.0
    return FaceField(g, du, dv)
