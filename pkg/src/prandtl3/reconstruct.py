"""Physical-variable reconstruction and verification of the full system.

The converged transformed field is inverted column by column to the
tangential velocity u(t, x, y, z); the second tangential component is
v = k u by construction, and the normal velocity w closes the momentum
balance.  The evaluators below measure, entirely in discrete terms, how
well the reconstructed state satisfies the three-dimensional equations:
the two momentum residuals, the divergence, the structural identity, the
outer Bernoulli balance, and the divergence/Bernoulli identity that ties
them together without reference to an exact solution.
"""

import numpy as np

from .crocco import ZETA_MAX_DEFAULT, coefficients, crocco_inverse
from .errors import VanishingShear
from .grids import cheb_diff, cumtrapz0, diff_axis, diff_nonuniform, geometric_grid

SHEAR_FLOOR = 1e-6      # relative floor on d_z u / U for the w-closure
Z_NORM_FRACTION = 0.95  # residual norms exclude the top 5% of the z range
IDENTITY_FLOOR = 1e-8   # below this the divergence identity counts as exact


def default_z_grid(n_zeta, z_max=10.0, ratio=1.05, factor=4):
    """Wall-clustered z samples sized against the transformed grid."""
    return geometric_grid(factor * n_zeta, z_max, ratio=ratio)


class PrandtlState:
    """Reconstructed velocities on a (t, x, y, z) grid.

    ``shear`` and ``dshear`` hold d_z u and d^2_z u evaluated through the
    transformed field (exact chain-rule values, no wall differencing);
    they are None for states assembled from raw samples.
    """

    def __init__(self, grid, z, u, v, w, K, U, px, shear=None, dshear=None,
                 flow=None):
        self.grid = grid
        self.z = np.asarray(z, dtype=float)
        self.u = u
        self.v = v
        self.w = w
        self.K = K
        self.U = U
        self.px = px
        self.shear = shear
        self.dshear = dshear
        self.flow = flow

    @property
    def z_cut_index(self):
        """First index of the excluded tail band (norms stop before it)."""
        return int(np.searchsorted(self.z, Z_NORM_FRACTION * self.z[-1],
                                   side="right"))


def tangential_velocity(field, flow, z, zeta_max=ZETA_MAX_DEFAULT):
    """Column-wise inverse transform of the solved field to u(t, x, y, z)."""
    u, _, _ = _invert_columns(field, flow, z, zeta_max)
    return u


def _invert_columns(field, flow, z, zeta_max):
    grid = field.grid
    coeffs = coefficients(flow, grid)
    U = coeffs.U
    W = field.W
    Wz = cheb_diff(W, grid.zeta, axis=3, order=1)
    n_t, n_xi, n_eta, _ = grid.shape()
    n_z = len(z)
    u = np.empty((n_t, n_xi, n_eta, n_z))
    shear = np.empty_like(u)
    dshear = np.empty_like(u)
    zeta = grid.zeta
    for it in range(n_t):
        for ix in range(n_xi):
            for ie in range(n_eta):
                Uc = float(U[it, ix, ie])
                uc = crocco_inverse(W[it, ix, ie], zeta, z, U=Uc,
                                    zeta_max=zeta_max)
                zc = np.clip(uc / Uc, 0.0, 1.0)
                Wt = np.interp(zc, zeta, W[it, ix, ie])
                Wzt = np.interp(zc, zeta, Wz[it, ix, ie])
                u[it, ix, ie] = uc
                shear[it, ix, ie] = Uc * Wt
                dshear[it, ix, ie] = Uc * Wt * Wzt
    return u, shear, dshear


def normal_velocity(u, flow, grid, z, shear=None, dshear=None, px=None,
                    floor=SHEAR_FLOOR):
    """Close the first momentum balance for w.

        w = (-d_t u - u (d_x + k d_y) u + d_zz u - p_x) / d_z u

    z-derivatives use the supplied chain-rule fields when available and
    fall back to differencing ``u``.  Where the shear drops below
    ``floor * U`` (the exponential tail of the profile) the division is
    unreliable; w is extended constant in z from the last reliable node.
    The wall value is set exactly to zero, which is the limit of the
    formula under the wall flux condition.
    """
    coeffs = coefficients(flow, grid)
    U = coeffs.U
    K = coeffs.K
    if px is None:
        px = coeffs.px_over_U * U
    if shear is None:
        shear = diff_nonuniform(u, z, axis=3, order=1)
    if dshear is None:
        dshear = diff_nonuniform(u, z, axis=3, order=2)
    ut = diff_axis(u, grid.dt, axis=0, order=1, acc=2)
    ux = diff_axis(u, grid.dxi, axis=1, order=1, acc=2)
    uy = diff_axis(u, grid.deta, axis=2, order=1, acc=2)
    numer = -ut - u * (ux + K[None, :, :, None] * uy) + dshear - px[..., None]
    floor_abs = floor * U[..., None]
    good = shear > floor_abs
    if np.any(~good[..., 0]):
        raise VanishingShear("wall shear at or below the floor; w-closure undefined")
    with np.errstate(divide="ignore", invalid="ignore"):
        w = np.where(good, numer / np.where(good, shear, 1.0), 0.0)
    # constant extension in z beyond the last reliable node per column
    nz = u.shape[-1]
    idx = np.where(good, np.arange(nz), 0)
    idx = np.maximum.accumulate(idx, axis=-1)
    w = np.take_along_axis(w, idx, axis=-1)
    w[..., 0] = 0.0
    return w


def reconstruct_state(field, flow, z=None, zeta_max=ZETA_MAX_DEFAULT):
    """Full physical state (u, v = ku, w) from a converged field."""
    grid = field.grid
    if z is None:
        z = default_z_grid(grid.n_zeta)
    coeffs = coefficients(flow, grid)
    u, shear, dshear = _invert_columns(field, flow, z, zeta_max)
    K = coeffs.K
    v = K[None, :, :, None] * u
    px = coeffs.px_over_U * coeffs.U
    w = normal_velocity(u, flow, grid, z, shear=shear, dshear=dshear, px=px)
    return PrandtlState(grid, z, u, v, w, K, coeffs.U, px,
                        shear=shear, dshear=dshear, flow=flow)


def structure_defect(u, v, k, grid=None):
    """Exact nodewise max of |v - k u|."""
    if hasattr(k, "sample"):
        K = k.sample(grid.xi, grid.eta)[None, :, :, None]
    else:
        K = np.asarray(k)
        if K.ndim == 2:
            K = K[None, :, :, None]
    return float(np.max(np.abs(v - K * u)))


def bernoulli_defect(flow, grid, acc_t=4):
    """Discrete outer-flow balance U_t + U U_x + k U U_y + p_x."""
    coeffs = coefficients(flow, grid)
    U = coeffs.U
    Ut = diff_axis(U, grid.dt, axis=0, order=1, acc=acc_t)
    Ux = diff_axis(U, grid.dxi, axis=1, order=1, acc=2)
    Uy = diff_axis(U, grid.deta, axis=2, order=1, acc=2)
    px = coeffs.px_over_U * U
    return Ut + U * Ux + coeffs.K * U * Uy + px


class ResidualReport:
    """Max-norms of the discrete system residuals below the z cutoff."""

    def __init__(self, res_u, res_v, res_div, structure, bernoulli,
                 z_excluded, shape):
        self.res_u = res_u
        self.res_v = res_v
        self.res_div = res_div
        self.structure = structure
        self.bernoulli = bernoulli
        self.z_excluded = z_excluded
        self.shape = shape

    def __str__(self):
        return (f"residuals: momentum-u {self.res_u:.3e}  momentum-v {self.res_v:.3e}  "
                f"divergence {self.res_div:.3e}  structure {self.structure:.3e}  "
                f"bernoulli {self.bernoulli:.3e}  "
                f"(z tail above {self.z_excluded:.3g} excluded)")


def _state_z_derivs(state):
    if state.shear is not None and state.dshear is not None:
        return state.shear, state.dshear
    uz = diff_nonuniform(state.u, state.z, axis=3, order=1)
    uzz = diff_nonuniform(state.u, state.z, axis=3, order=2)
    return uz, uzz


def prandtl_residual(state, flow):
    """Discrete residuals of the full system on a reconstructed state.

    (i)  d_t u + (u d_x + v d_y + w d_z) u - d_zz u + p_x
    (ii) d_t v + (u d_x + v d_y + w d_z) v - d_zz v + p_y,  p_y = k p_x
    (iii) d_x u + d_y v + d_z w

    z-derivatives of u and of v = k u ride on the chain-rule shear fields
    when the state carries them, matching the w-closure, so (i) measures
    only the tangential discretization; the divergence differentiates the
    computed w directly.
    """
    grid = state.grid
    u, v, w = state.u, state.v, state.w
    K = state.K[None, :, :, None]
    uz, uzz = _state_z_derivs(state)
    px = state.px[..., None]
    ut = diff_axis(u, grid.dt, axis=0, order=1, acc=2)
    ux = diff_axis(u, grid.dxi, axis=1, order=1, acc=2)
    uy = diff_axis(u, grid.deta, axis=2, order=1, acc=2)
    res_u = ut + u * ux + v * uy + w * uz - uzz + px
    vt = diff_axis(v, grid.dt, axis=0, order=1, acc=2)
    vx = diff_axis(v, grid.dxi, axis=1, order=1, acc=2)
    vy = diff_axis(v, grid.deta, axis=2, order=1, acc=2)
    res_v = vt + u * vx + v * vy + w * K * uz - K * uzz + K * px
    wz = diff_nonuniform(w, state.z, axis=3, order=1)
    res_div = ux + vy + wz
    sel = slice(None, state.z_cut_index)
    report = ResidualReport(
        res_u=float(np.max(np.abs(res_u[..., sel]))),
        res_v=float(np.max(np.abs(res_v[..., sel]))),
        res_div=float(np.max(np.abs(res_div[..., sel]))),
        structure=structure_defect(u, v, state.K),
        bernoulli=float(np.max(np.abs(bernoulli_defect(flow, grid)))),
        z_excluded=float(state.z[state.z_cut_index - 1]),
        shape=u.shape,
    )
    return report


def momentum_cross_defect(state, flow=None):
    """Field of residual(ii) - k residual(i) below the z cutoff.

    For a structured state all z- and t-coupled terms cancel exactly, so
    this reduces to u^2 times the discrete directional constraint on k
    plus second-order product-rule defects; it vanishes at the rate of
    the tangential stencils without knowing the exact solution.
    """
    grid = state.grid
    u, v = state.u, state.v
    K = state.K[None, :, :, None]
    ut = diff_axis(u, grid.dt, axis=0, order=1, acc=2)
    ux = diff_axis(u, grid.dxi, axis=1, order=1, acc=2)
    uy = diff_axis(u, grid.deta, axis=2, order=1, acc=2)
    vt = diff_axis(v, grid.dt, axis=0, order=1, acc=2)
    vx = diff_axis(v, grid.dxi, axis=1, order=1, acc=2)
    vy = diff_axis(v, grid.deta, axis=2, order=1, acc=2)
    field = (vt - K * ut) + u * (vx - K * ux) + v * (vy - K * uy)
    sel = slice(None, state.z_cut_index)
    return field[..., sel], float(np.max(np.abs(field[..., sel])))


def divergence_identity(state, flow):
    """Discrete divergence/Bernoulli identity residual.

    Writes the divergence-built normal velocity
        w_div = -int_0^z (d_x u + d_y v) dz'
    and evaluates

        Q = W [d_z w_div + (d_x + k d_y) u] + d_y k u W
            - (u^2/U^3)(U_t + U U_x + k U U_y + p_x),

    with W = d_z u / U.  Q couples only discrete operators applied to the
    reconstructed u, so it converges at the stencil order regardless of
    how accurate the solve was; for exact outer data the Bernoulli factor
    is analytic zero and Q collapses to pure product-rule defects.
    """
    grid = state.grid
    u = state.u
    K = state.K[None, :, :, None]
    uz, _ = _state_z_derivs(state)
    U4 = state.U[..., None]
    Wt = uz / U4
    ux = diff_axis(u, grid.dxi, axis=1, order=1, acc=2)
    vy = diff_axis(state.K[None, :, :, None] * u, grid.deta, axis=2, order=1, acc=2)
    uy = diff_axis(u, grid.deta, axis=2, order=1, acc=2)
    w_div = -cumtrapz0(ux + vy, x=state.z, axis=3)
    dzw = diff_nonuniform(w_div, state.z, axis=3, order=1)
    Ky = cheb_diff(state.K, grid.eta, axis=1, order=1)[None, :, :, None]
    bern = bernoulli_defect(flow, grid)[..., None]
    Q = Wt * (dzw + ux + K * uy) + Ky * u * Wt - (u ** 2 / U4 ** 3) * bern
    sel = slice(None, state.z_cut_index)
    return Q[..., sel], float(np.max(np.abs(Q[..., sel])))


def wall_curvature_diagnostic(state):
    """Third-order shear combination (d_zu d^3_zu - (d^2_zu)^2) / (d_zu)^3.

    Reported without a threshold: the discrete analogue is noisy near the
    wall, so this is a diagnostic only.
    """
    uz, uzz = _state_z_derivs(state)
    uzzz = diff_nonuniform(state.u, state.z, axis=3, order=3)
    sel = slice(None, state.z_cut_index)
    val = (uz * uzzz - uzz ** 2) / np.maximum(uz, 1e-30) ** 3
    return float(np.max(np.abs(val[..., sel])))
