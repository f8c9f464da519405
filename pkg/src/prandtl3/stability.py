"""Linearized three-dimensional perturbations of a structured background.

General (non-structured) perturbations (u, v, w) of a background
(u_s, k u_s, w_s) decouple through two scalar unknowns: the structural
deviation tilde_v = k u - v, which satisfies a plain advection-diffusion
problem, and h = d_z(u / d_z u_s), which satisfies a degenerate problem
with a Robin wall row and a nonlocal lower-order term.  Solving both and
assembling (u, v, w) gives the perturbation; weighted space-time norms
quantify the data-to-solution bound whose finiteness is the linear
stability statement.
"""

import numpy as np

from .errors import (BudgetExceedsStencil, CFLViolation, GridTooCoarse,
                     VanishingShear)
from .grids import cumtrapz0, diff_axis
from .solver import _thomas, _upwind_deriv


class StabilityGrid:
    """Uniform (t, x, y, z) grid for the perturbation problem."""

    def __init__(self, n_t, n_x, n_y, n_z, t_max=1.0, x_range=(0.0, 1.0),
                 y_range=(0.0, 1.0), z_max=12.0):
        if min(n_t, n_x, n_y) < 4 or n_z < 8:
            raise GridTooCoarse("stability grid needs >=4 tangential and >=8 z nodes")
        self.n_t, self.n_x, self.n_y, self.n_z = int(n_t), int(n_x), int(n_y), int(n_z)
        self.t_max = float(t_max)
        self.x_range = tuple(map(float, x_range))
        self.y_range = tuple(map(float, y_range))
        self.z_max = float(z_max)
        self.t = np.linspace(0.0, self.t_max, self.n_t)
        self.x = np.linspace(*self.x_range, self.n_x)
        self.y = np.linspace(*self.y_range, self.n_y)
        self.z = np.linspace(0.0, self.z_max, self.n_z)
        self.dt = self.t[1] - self.t[0]
        self.dx = self.x[1] - self.x[0]
        self.dy = self.y[1] - self.y[0]
        self.dz = self.z[1] - self.z[0]

    def shape(self):
        return (self.n_t, self.n_x, self.n_y, self.n_z)

    def refined(self, factor=2):
        return StabilityGrid((self.n_t - 1) * factor + 1, (self.n_x - 1) * factor + 1,
                             (self.n_y - 1) * factor + 1, (self.n_z - 1) * factor + 1,
                             t_max=self.t_max, x_range=self.x_range,
                             y_range=self.y_range, z_max=self.z_max)


class Background:
    """Structured background state and its derived linearization weights.

    eta_c = d_zz u_s / d_z u_s and zeta_c = (transport - d_zz) d_z u_s
    over d_z u_s reuse the background transport (d_t + u_s d_x +
    k u_s d_y + w_s d_z); both must stay bounded, which requires
    d_z u_s > 0.
    """

    def __init__(self, us, ws, K, grid, dzus=None, dzzus=None):
        self.us = us
        self.ws = ws
        self.K = K if np.ndim(K) == 2 else np.full((grid.n_x, grid.n_y), float(K))
        self.grid = grid
        self.Ky = diff_axis(self.K, grid.dy, axis=1, order=1, acc=2)
        self.dzus = diff_axis(us, grid.dz, axis=3, order=1, acc=2) if dzus is None else dzus
        self.dzzus = diff_axis(us, grid.dz, axis=3, order=2, acc=2) if dzzus is None else dzzus
        if np.any(self.dzus <= 0.0):
            raise VanishingShear("background shear must be positive on the grid")
        self.eta_c = self.dzzus / self.dzus
        K4 = self.K[None, :, :, None]
        transport = (diff_axis(self.dzus, grid.dt, axis=0, order=1, acc=2)
                     + us * diff_axis(self.dzus, grid.dx, axis=1, order=1, acc=2)
                     + K4 * us * diff_axis(self.dzus, grid.dy, axis=2, order=1, acc=2)
                     + ws * diff_axis(self.dzus, grid.dz, axis=3, order=1, acc=2)
                     - diff_axis(self.dzus, grid.dz, axis=3, order=2, acc=2))
        self.zeta_c = transport / self.dzus

    @classmethod
    def shear(cls, grid, k=0.5):
        """Static tanh shear layer with exact z-derivatives."""
        z = grid.z
        prof = np.tanh(z)
        sech2 = 1.0 / np.cosh(z) ** 2
        shape = grid.shape()
        us = np.broadcast_to(prof, shape).copy()
        ws = np.zeros(shape)
        dzus = np.broadcast_to(sech2, shape).copy()
        dzzus = np.broadcast_to(-2.0 * prof * sech2, shape).copy()
        return cls(us, ws, k, grid, dzus=dzus, dzzus=dzzus)


class PerturbationData:
    """Forcing, initial and inflow data of the linearized problem.

    ``edges`` maps plane names ("left" -> x = x_min, "bottom"/"top" ->
    y extremes) to (u1, v1) arrays shaped like the corresponding plane
    slice; planes listed there are pinned to the data during the solves.
    """

    def __init__(self, grid, f1=None, f2=None, u0=None, v0=None, edges=None,
                 lam=0.0, l=1.0, j=4):
        shape = grid.shape()
        zero4 = np.zeros(shape)
        zero3 = np.zeros(shape[1:])
        self.f1 = zero4 if f1 is None else f1
        self.f2 = zero4 if f2 is None else f2
        self.u0 = zero3 if u0 is None else u0
        self.v0 = zero3 if v0 is None else v0
        self.edges = {} if edges is None else edges
        self.lam = float(lam)
        self.l = float(l)
        self.j = int(j)


def _plane_slices(name):
    if name == "left":
        return (slice(None), 0)
    if name == "right":
        return (slice(None), -1)
    if name == "bottom":
        return (slice(None), slice(None), 0)
    if name == "top":
        return (slice(None), slice(None), -1)
    raise KeyError(name)


def _pin_plane(F, name, value, level):
    if name == "left":
        F[level, 0] = value
    elif name == "right":
        F[level, -1] = value
    elif name == "bottom":
        F[level, :, 0] = value
    else:
        F[level, :, -1] = value


def _edge_plane(arr4, name):
    "Slice a (t,x,y,z) array to the named boundary plane."
    if name == "left":
        return arr4[:, 0]
    if name == "right":
        return arr4[:, -1]
    if name == "bottom":
        return arr4[:, :, 0]
    return arr4[:, :, -1]


def _cfl_check(bg, grid, safety=0.9):
    smax = float(np.max(np.abs(bg.us))) * max(1.0, float(np.max(np.abs(bg.K))))
    bound = min(grid.dx, grid.dy) / max(smax, 1e-300)
    if grid.dt > safety * bound:
        raise CFLViolation(f"dt={grid.dt:.3e} exceeds {safety:.2f} x transport bound {bound:.3e}")


def _column_march(bg, grid, init, forcing, edge_data, az_extra, zero_order,
                  wall="dirichlet", wall_rhs=None, nonlocal_coef=None):
    """Shared semi-implicit march for the two scalar problems.

    Explicit slope-limited (x, y) transport at the old level; implicit
    backward-Euler z columns with upwinded vertical advection
    (w_s + az_extra), the given zero-order coefficient and unit
    diffusion.  ``wall`` selects a homogeneous Dirichlet row or the Robin
    row (d_z + 2 eta_c) h = wall_rhs; the top row is always Dirichlet 0.
    The optional nonlocal term d_z[c int_0^z h] enters explicitly from
    the previous level with c = nonlocal_coef.
    """
    _cfl_check(bg, grid)
    dt, dz = grid.dt, grid.dz
    K4 = bg.K[None, :, :, None]
    F = np.empty(grid.shape())
    F[0] = init
    for name, value in edge_data.items():
        _pin_plane(F, name, value[0], 0)

    for n in range(grid.n_t - 1):
        su = bg.us[n]
        sv = K4[0] * bg.us[n]
        adv = su * _upwind_deriv(F[n], grid.dx, su, axis=0) \
            + sv * _upwind_deriv(F[n], grid.dy, sv, axis=1)
        rhs = F[n] - dt * adv + dt * forcing[n + 1]
        if nonlocal_coef is not None:
            integral = cumtrapz0(F[n], x=grid.z, axis=-1)
            rhs -= dt * diff_axis(nonlocal_coef[n + 1] * integral, dz,
                                  axis=-1, order=1, acc=2)
        az = bg.ws[n + 1] + az_extra[n + 1]
        azp = np.maximum(az, 0.0)
        azm = np.minimum(az, 0.0)
        lo = -dt * azp / dz - dt / dz ** 2
        hi = dt * azm / dz - dt / dz ** 2
        di = 1.0 + dt * (azp - azm) / dz + dt * zero_order[n + 1] + 2.0 * dt / dz ** 2
        lo, hi = np.broadcast_to(lo, rhs.shape).copy(), np.broadcast_to(hi, rhs.shape).copy()
        di = np.broadcast_to(di, rhs.shape).copy()
        lo[..., -1] = 0.0
        hi[..., -1] = 0.0
        di[..., -1] = 1.0
        rhs[..., -1] = 0.0
        if wall == "dirichlet":
            lo[..., 0] = 0.0
            hi[..., 0] = 0.0
            di[..., 0] = 1.0
            rhs[..., 0] = 0.0
        else:
            # (-3 h0 + 4 h1 - h2)/(2 dz) + 2 eta_c h0 = wall_rhs
            r0 = -3.0 / (2.0 * dz) + 2.0 * bg.eta_c[n + 1, :, :, 0]
            r1 = 4.0 / (2.0 * dz)
            r2 = -1.0 / (2.0 * dz)
            c1 = hi[..., 1]
            f = r2 / c1
            di[..., 0] = r0 - f * lo[..., 1]
            hi[..., 0] = r1 - f * di[..., 1]
            lo[..., 0] = 0.0
            rhs[..., 0] = wall_rhs[n + 1] - f * rhs[..., 1]
        F[n + 1] = _thomas(lo, di, hi, rhs)
        for name, value in edge_data.items():
            _pin_plane(F, name, value[n + 1], n + 1)
    return F


def solve_tilde_v(bg, data, grid):
    """Structural deviation tilde_v = k u - v.

    Transport by the background, zero-order term k_y u_s, unit diffusion
    in z, forcing k f1 - f2; Dirichlet 0 at both z ends, inflow planes
    pinned to k u1 - v1, initial value k u0 - v0.
    """
    K4 = bg.K[None, :, :, None]
    forcing = K4 * data.f1 - data.f2
    zero_order = bg.Ky[None, :, :, None] * bg.us
    init = bg.K[:, :, None] * data.u0 - data.v0
    edge_data = {}
    for name, (u1, v1) in data.edges.items():
        Kp = _edge_plane(np.broadcast_to(K4, grid.shape()), name)
        edge_data[name] = Kp * u1 - v1
    az_extra = np.zeros(grid.shape())
    return _column_march(bg, grid, init, forcing, edge_data, az_extra,
                         zero_order, wall="dirichlet")


def solve_h(bg, tilde_v, data, grid):
    """Normalized shear unknown h = d_z(u / d_z u_s).

    Background transport, vertical drift -2 eta_c folded into the
    upwinded z-advection, zero-order -2 d_z eta_c, the nonlocal term
    d_z[(zeta_c - k_y u_s) int_0^z h] lagged one level, unit diffusion.
    Robin wall row (d_z h + 2 eta_c h)|_0 = -tilde_f|_0; forcing
    d_z(tilde_f + d_y u_s tilde_v / d_z u_s) - d_y tilde_v.
    """
    K4 = bg.K[None, :, :, None]
    tilde_f = data.f1 / bg.dzus
    dyus = diff_axis(bg.us, grid.dy, axis=2, order=1, acc=2)
    inner = tilde_f + dyus * tilde_v / bg.dzus
    forcing = diff_axis(inner, grid.dz, axis=3, order=1, acc=2) \
        - diff_axis(tilde_v, grid.dy, axis=2, order=1, acc=2)
    az_extra = -2.0 * bg.eta_c
    zero_order = -2.0 * diff_axis(bg.eta_c, grid.dz, axis=3, order=1, acc=2)
    nonlocal_coef = bg.zeta_c - bg.Ky[None, :, :, None] * bg.us
    init = diff_axis(data.u0 / bg.dzus[0], grid.dz, axis=2, order=1, acc=2)
    edge_data = {}
    for name, (u1, v1) in data.edges.items():
        plane = u1 / _edge_plane(bg.dzus, name)
        edge_data[name] = diff_axis(plane, grid.dz, axis=-1, order=1, acc=2)
    wall_rhs = -tilde_f[:, :, :, 0]
    return _column_march(bg, grid, init, forcing, edge_data, az_extra,
                         zero_order, wall="robin", wall_rhs=wall_rhs,
                         nonlocal_coef=nonlocal_coef)


def assemble_perturbation(h, tilde_v, bg):
    """Velocities from the scalar unknowns.

    u = d_z u_s int_0^z h, v = k u - tilde_v,
    w = -int_0^z (d_x u + d_y v); u and w vanish on z = 0 exactly.
    """
    grid = bg.grid
    u = bg.dzus * cumtrapz0(h, x=grid.z, axis=-1)
    v = bg.K[None, :, :, None] * u - tilde_v
    div_t = diff_axis(u, grid.dx, axis=1, order=1, acc=2) \
        + diff_axis(v, grid.dy, axis=2, order=1, acc=2)
    w = -cumtrapz0(div_t, x=grid.z, axis=-1)
    return u, v, w


# ---------------------------------------------------------------------------
# weighted norms

def _stencil_guard(grid, tangential_order, z_order):
    """Raise when the budget's stencils do not fit the grid sensibly."""
    npts_z = z_order + 2
    if grid.n_z < 4 * npts_z:
        raise BudgetExceedsStencil(
            f"z-derivative order {z_order} needs {4 * npts_z} z nodes, grid has {grid.n_z}")
    for n, name in ((grid.n_t, "t"), (grid.n_x, "x"), (grid.n_y, "y")):
        if n < tangential_order + 2:
            raise BudgetExceedsStencil(
                f"tangential order {tangential_order} does not fit {name} axis of {n} nodes")


def _tangential_multi_indices(max_order):
    out = []
    for b1 in range(max_order + 1):
        for b2 in range(max_order + 1 - b1):
            for b3 in range(max_order + 1 - b1 - b2):
                out.append((b1, b2, b3))
    return out


def _mixed_derivative(f, grid, beta, q, z_cache=None):
    g = f if q == 0 else (z_cache[q] if z_cache is not None
                          else diff_axis(f, grid.dz, axis=3, order=q, acc=2))
    b1, b2, b3 = beta
    if b1:
        g = diff_axis(g, grid.dt, axis=0, order=b1, acc=2)
    if b2:
        g = diff_axis(g, grid.dx, axis=1, order=b2, acc=2)
    if b3:
        g = diff_axis(g, grid.dy, axis=2, order=b3, acc=2)
    return g


def _sq_integral(g, grid, lam, l):
    """L2(Q_T)^2 with the e^{-2 lam t} <z>^{2l} weight, trapezoid rule."""
    wt = np.exp(-2.0 * lam * grid.t)[:, None, None, None]
    wz = (1.0 + grid.z ** 2) ** l
    inner = np.trapezoid(wt * g ** 2 * wz, x=grid.z, axis=-1)
    inner = np.trapezoid(inner, x=grid.y, axis=-1)
    inner = np.trapezoid(inner, x=grid.x, axis=-1)
    return float(np.trapezoid(inner, x=grid.t, axis=-1))


def _sup_z_integral(g, grid, lam, l):
    """sup_z of the (t,x,y)-L2 with the same weights."""
    wt = np.exp(-2.0 * lam * grid.t)[:, None, None, None]
    wz = (1.0 + grid.z ** 2) ** l
    inner = np.trapezoid(wt * g ** 2 * wz, x=grid.y, axis=2)
    inner = np.trapezoid(inner, x=grid.x, axis=1)
    inner = np.trapezoid(inner, x=grid.t, axis=0)
    return float(np.sqrt(np.max(inner)))


def weighted_norm(f, grid, lam=0.0, l=0.0, budget=(0, 0)):
    """Weighted derivative norms of a space-time field.

    budget forms:
      (j1, j2)   sum of squares over tangential multi-indices |beta| <= j1
                 and z-orders q <= j2 (each index once)
      ("A", j)   sum of squares over pairs with |beta| + floor((q+1)/2) <= j
      ("D", j)   plain sum over the same pairs of the z-wise sup of
                 (t, x, y)-integrals

    All squared terms carry the e^{-2 lam t} <z>^{2l} weight and are
    integrated by the trapezoid rule.
    """
    f = np.asarray(f, dtype=float)
    if isinstance(budget, tuple) and isinstance(budget[0], str):
        kind, j = budget[0].upper(), int(budget[1])
        pairs = [(beta, q) for q in range(2 * j + 1)
                 for beta in _tangential_multi_indices(j - (q + 1) // 2)
                 if sum(beta) + (q + 1) // 2 <= j]
        max_tan = max((max(b) for b, _ in pairs), default=0)
        max_q = max((q for _, q in pairs), default=0)
        _stencil_guard(grid, max_tan, max_q)
        z_cache = {q: diff_axis(f, grid.dz, axis=3, order=q, acc=2)
                   for q in range(1, max_q + 1)}
        if kind == "A":
            total = 0.0
            for beta, q in pairs:
                g = _mixed_derivative(f, grid, beta, q, z_cache)
                total += _sq_integral(g, grid, lam, l)
            return float(np.sqrt(total))
        if kind == "D":
            total = 0.0
            for beta, q in pairs:
                g = _mixed_derivative(f, grid, beta, q, z_cache)
                total += _sup_z_integral(g, grid, lam, l)
            return float(total)
        raise ValueError(f"unknown norm kind {budget[0]!r}")
    j1, j2 = map(int, budget)
    _stencil_guard(grid, j1, j2)
    z_cache = {q: diff_axis(f, grid.dz, axis=3, order=q, acc=2)
               for q in range(1, j2 + 1)}
    total = 0.0
    for q in range(j2 + 1):
        for beta in _tangential_multi_indices(j1):
            g = _mixed_derivative(f, grid, beta, q, z_cache)
            total += _sq_integral(g, grid, lam, l)
    return float(np.sqrt(total))


# ---------------------------------------------------------------------------
# data norms and the stability estimate

def _sq_integral_space(g, grid, l):
    wz = (1.0 + grid.z ** 2) ** l
    inner = np.trapezoid(g ** 2 * wz, x=grid.z, axis=-1)
    inner = np.trapezoid(inner, x=grid.y, axis=-1)
    return float(np.trapezoid(inner, x=grid.x, axis=-1))


def _sq_integral_plane(g, grid, name, lam, l):
    wt = np.exp(-2.0 * lam * grid.t)[:, None, None]
    wz = (1.0 + grid.z ** 2) ** l
    tang = grid.y if name in ("left", "right") else grid.x
    inner = np.trapezoid(wt * g ** 2 * wz, x=grid.z, axis=-1)
    inner = np.trapezoid(inner, x=tang, axis=-1)
    return float(np.trapezoid(inner, x=grid.t, axis=-1))


def data_norms(bg, data, u, v, grid):
    """Initial/inflow data norms M0 and M1 of the solved perturbation.

    Time traces at t = 0 and normal traces on the pinned planes are taken
    from the solved fields by differencing (the analytic traces are not
    closed-form for numerically generated backgrounds).  M1 carries the
    division by the background shear (wall shear for the initial terms).
    """
    j, l, lam = data.j, data.l, data.lam
    wall_shear = bg.dzus[0]
    M0 = 0.0
    M1 = 0.0
    for i in range(j + 1):
        if i == 0:
            u0i, v0i = u[0], v[0]
        else:
            u0i = diff_axis(u, grid.dt, axis=0, order=i, acc=2)[0]
            v0i = diff_axis(v, grid.dt, axis=0, order=i, acc=2)[0]
        for j1 in range(j + 1 - i):
            for j2 in range(j + 1 - i - j1):
                g_u = _mixed_derivative(u0i[None], grid, (0, j1, j2), 0)[0]
                g_v = _mixed_derivative(v0i[None], grid, (0, j1, j2), 0)[0]
                M0 += np.sqrt(_sq_integral_space(g_u, grid, l))
                M0 += np.sqrt(_sq_integral_space(g_v, grid, l))
                M1 += np.sqrt(_sq_integral_space(g_u / wall_shear, grid, l))
                M1 += np.sqrt(_sq_integral_space(g_v / wall_shear, grid, l))
    for name in data.edges:
        axis = 1 if name in ("left", "right") else 2
        h_n = grid.dx if axis == 1 else grid.dy
        tang_axis = 2 if axis == 1 else 1
        h_t = grid.dy if axis == 1 else grid.dx
        for i in range(j + 1):
            u1i = _edge_plane(diff_axis(u, h_n, axis=axis, order=i, acc=2)
                              if i else u, name)
            v1i = _edge_plane(diff_axis(v, h_n, axis=axis, order=i, acc=2)
                              if i else v, name)
            shear_p = _edge_plane(bg.dzus, name)
            for j1 in range(j + 1 - i):
                for j2 in range(j + 1 - i - j1):
                    for g in (u1i, v1i):
                        gt = g if j1 == 0 else diff_axis(g, grid.dt, axis=0,
                                                         order=j1, acc=2)
                        gt = gt if j2 == 0 else diff_axis(gt, h_t, axis=1,
                                                          order=j2, acc=2)
                        M0 += np.sqrt(_sq_integral_plane(gt, grid, name, lam, l))
                        M1 += np.sqrt(_sq_integral_plane(gt / shear_p, grid,
                                                         name, lam, l))
    return M0, M1


class StabilityReport:
    """Measured norms and the data-to-solution ratio of one run."""

    def __init__(self, norm_u, norm_v, norm_w, M0, M1, forcing_norms,
                 lam, l, j):
        self.norm_u = norm_u
        self.norm_v = norm_v
        self.norm_w = norm_w
        self.M0 = M0
        self.M1 = M1
        self.forcing_norms = forcing_norms
        self.lam = lam
        self.l = l
        self.j = j
        self.lhs = norm_u + norm_v + norm_w
        self.rhs = M0 + M1 + sum(forcing_norms)
        self.trivial = self.lhs == 0.0 and self.rhs == 0.0
        self.ratio = 0.0 if self.trivial else self.lhs / max(self.rhs, 1e-300)

    @property
    def finite(self):
        return np.isfinite(self.lhs) and np.isfinite(self.rhs)

    def __str__(self):
        if self.trivial:
            return "stability: trivially stable (zero data, zero response)"
        return (f"stability: lhs={self.lhs:.6e} rhs={self.rhs:.6e} "
                f"ratio={self.ratio:.4f} (lam={self.lam}, l={self.l}, j={self.j})")


def stability_report(bg, data, fields, grid):
    """Estimate check: |u|_A(j-1) + |v|_A(j-1) + |w|_D(j-2) vs the data.

    fields is the dict from a completed run with keys u, v, w.  The right
    side combines M0, M1 and the four forcing norms; a pass is a finite
    ratio (the theory's constant is not quantified, so the measured ratio
    is reported rather than thresholded).
    """
    j, l, lam = data.j, data.l, data.lam
    u, v, w = fields["u"], fields["v"], fields["w"]
    norm_u = weighted_norm(u, grid, lam, l, ("A", j - 1))
    norm_v = weighted_norm(v, grid, lam, l, ("A", j - 1))
    norm_w = weighted_norm(w, grid, lam, 0.0, ("D", j - 2))
    M0, M1 = data_norms(bg, data, u, v, grid)
    forcing = (
        weighted_norm(data.f1 / bg.dzus, grid, lam, l, ("A", j - 1)),
        weighted_norm(data.f2 / bg.dzus, grid, lam, l, ("A", j - 1)),
        weighted_norm(data.f1, grid, lam, l, ("A", j)),
        weighted_norm(data.f2, grid, lam, l, ("A", j)),
    )
    return StabilityReport(norm_u, norm_v, norm_w, M0, M1, forcing, lam, l, j)


def run_perturbation(bg, data, grid):
    """Full pipeline: both scalar solves, assembly, report."""
    tv = solve_tilde_v(bg, data, grid)
    h = solve_h(bg, tv, data, grid)
    u, v, w = assemble_perturbation(h, tv, bg)
    fields = {"tilde_v": tv, "h": h, "u": u, "v": v, "w": w}
    report = stability_report(bg, data, fields, grid)
    return fields, report
