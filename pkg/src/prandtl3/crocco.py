"""Crocco transform, trace recursions and data compatibility checking.

In the transformed frame (t, xi, eta, zeta) with zeta = u/U, the unknown
is the scaled shear W = u_z/U and the momentum equation becomes the
degenerate parabolic equation

    W_t + zeta U (W_xi + k W_eta) + A W_zeta + B W - W^2 W_zetazeta = 0,

with W = 0 at zeta = 1 and the nonlinear flux condition
W W_zeta = p_x/U at zeta = 0.  This module builds the coefficients A, B,
converts profiles between z and zeta, generates the time and normal
derivative traces a well-posed data set must match at the parabolic
corner, and verifies the resulting compatibility conditions.

All derivatives taken inside the trace recursions are global Chebyshev
fits (see grids.cheb_diff): the recursion is quadratic in W, so the
endpoint error spikes of repeated local stencils grow roughly like
1/h^2 per level and would swamp the genuine level-4 traces, whose true
size already grows factorially.
"""

from math import comb

import numpy as np
from scipy.interpolate import PchipInterpolator

from .errors import (BadLimit, CharacteristicEdge, CutoffTooLarge,
                     GridTooCoarse, IncompatibleInflowData, MissingSamples,
                     MissingTraces, NonMonotone, NonPositiveW)
from .flowfield import CHAR_TOL
from .grids import cheb_diff, cumtrapz0, diff_axis, diff_nonuniform, poly_jets

# default transform cutoff; beyond it the exponential tail takes over
ZETA_MAX_DEFAULT = 1.0 - 2.0 ** -7

# defect-to-term ratio below which an inflow defect counts as numerically
# zero; mesh-accurate data cancels to ~1e-4 of its terms, genuine normal
# variation stays O(1)
NOISE_RTOL = 1e-3

# representation roughness of mesh-valued data, relative to its sup: time
# stepping accumulates rounding that behaves, under the jet extractors,
# like white noise a couple of decades above machine precision.  Measured
# responses across extraction depths imply 3e-17..2.4e-16; the floor
# coefficient carries an order of magnitude of headroom on the worst case
MESH_EPS = 4e-15


# ---------------------------------------------------------------------------
# profile transforms

def crocco_forward(u, z, U=1.0, zeta=None, limit_tol=0.02):
    """Transform a velocity profile u(z) into the scaled shear W(zeta).

    zeta = u/U and W = u_z/U, with u_z from five-point sliding stencils on
    the (possibly stretched) z samples.  The exact endpoint (zeta, W) =
    (1, 0) is appended before the monotone-cubic resample, so the returned
    profile vanishes at zeta = 1 regardless of how far the samples reach.

    Raises NonMonotone if u is not strictly increasing and BadLimit if the
    profile stops short of (1 - limit_tol) U or overshoots U.
    """
    u = np.asarray(u, dtype=float)
    z = np.asarray(z, dtype=float)
    if u.ndim != 1 or u.shape != z.shape:
        raise ValueError("u and z must be matching 1-D arrays")
    if np.any(np.diff(u) <= 0.0):
        raise NonMonotone("velocity profile must increase strictly in z")
    if u[-1] > U * (1.0 + 1e-10):
        raise BadLimit(f"profile overshoots the outer speed: u_max={u[-1]:.6g} > U={U:.6g}")
    if u[-1] < (1.0 - limit_tol) * U:
        raise BadLimit(f"profile reaches only {u[-1] / U:.4f} of the outer speed")
    dudz = diff_nonuniform(u, z, order=1, npts=5)
    zs = u / U
    Ws = dudz / U
    if zs[-1] < 1.0:
        zs = np.append(zs, 1.0)
        Ws = np.append(Ws, 0.0)
    else:
        Ws[-1] = 0.0
    interp = PchipInterpolator(zs, Ws)
    if zeta is None:
        return interp
    zeta = np.asarray(zeta, dtype=float)
    if zeta.min() < zs[0] - 1e-12:
        raise MissingSamples(f"profile samples start at zeta={zs[0]:.4g}, "
                             f"grid requests {zeta.min():.4g}")
    W = interp(zeta)
    W[zeta >= 1.0 - 1e-15] = 0.0
    return W


def crocco_inverse(W, zeta, z, U=1.0, zeta_max=ZETA_MAX_DEFAULT, full=False):
    """Invert the transform: recover u at the z nodes from W(zeta).

    The map z(zeta) = int_0^zeta ds/W(s) has a logarithmic endpoint
    divergence; with c1 = W/(1-zeta) frozen at the cutoff node the
    singular part integrates exactly and the remainder
    1/W - 1/(c1(1-s)) is a regular trapezoid integrand.  Interior nodes
    are inverted by a few vectorized Newton steps on the tabulated map;
    beyond the cutoff the profile continues as the exponential tail
    u = U (1 - (1 - zeta_c) exp(-c1 (z - z0))).
    """
    W = np.asarray(W, dtype=float)
    zeta = np.asarray(zeta, dtype=float)
    z = np.asarray(z, dtype=float)
    kmax = int(np.searchsorted(zeta, zeta_max + 1e-14)) - 1
    if kmax < 2:
        raise GridTooCoarse(f"cutoff {zeta_max} leaves {kmax + 1} nodes")
    zc = zeta[:kmax + 1]
    Wc = W[:kmax + 1]
    if np.any(Wc <= 0.0):
        raise NonPositiveW(f"W must be positive below the cutoff, min={Wc.min():.3e}")
    c1 = Wc[-1] / (1.0 - zc[-1])
    g = 1.0 / Wc - 1.0 / (c1 * (1.0 - zc))
    ztab = cumtrapz0(g, x=zc) - np.log1p(-zc) / c1
    z0 = ztab[-1]
    if z0 > z[-1]:
        raise CutoffTooLarge(f"z(zeta_max)={z0:.4g} overflows the z grid (top {z[-1]:.4g})")
    interior = z <= z0
    zi = z[interior]
    zet = np.interp(zi, ztab, zc)
    dzc = np.diff(zc)
    for _ in range(40):
        j = np.clip(np.searchsorted(zc, zet, side="right") - 1, 0, kmax - 1)
        frac = (zet - zc[j]) / dzc[j]
        Wloc = Wc[j] + (Wc[j + 1] - Wc[j]) * frac
        gloc = 1.0 / Wloc - 1.0 / (c1 * (1.0 - zet))
        zval = ztab[j] + 0.5 * (g[j] + gloc) * (zet - zc[j]) \
            + (np.log1p(-zc[j]) - np.log1p(-zet)) / c1
        step = (zval - zi) * Wloc
        zet = np.clip(zet - step, 0.0, zc[-1])
        if np.max(np.abs(step)) < 1e-15:
            break
    zs = np.empty_like(z)
    zs[interior] = zet
    zs[~interior] = 1.0 - (1.0 - zc[-1]) * np.exp(-c1 * (z[~interior] - z0))
    u = U * zs
    if full:
        return u, zs, c1, z0
    return u


# ---------------------------------------------------------------------------
# transformed-equation coefficients

class CroccoCoefficients:
    """Coefficients of the transformed equation, in zeta-factored form.

        A = -(U_t/U) zeta(1-zeta) - (p_x/U)(1-zeta^2)
        B =  (U_t/U) + zeta (U_x + k U_y - U k_y)

    Only the (t, xi, eta) factors are stored; full (xi, eta, zeta) slices
    are materialized per time level on demand, which keeps refined-grid
    memory flat.
    """

    def __init__(self, grid, U, K, K_y, at, b1, px_over_U):
        self.grid = grid
        self.U = U                      # (n_t, n_xi, n_eta)
        self.K = K                      # (n_xi, n_eta)
        self.K_y = K_y
        self.at = at                    # U_t/U
        self.b1 = b1                    # U_x + k U_y - U k_y
        self.px_over_U = px_over_U
        zz = grid.zeta
        self._za = zz * (1.0 - zz)
        self._zb = 1.0 - zz ** 2

    def A_slice(self, it):
        return (-self.at[it][:, :, None] * self._za
                - self.px_over_U[it][:, :, None] * self._zb)

    def B_slice(self, it):
        return (self.at[it][:, :, None]
                + self.b1[it][:, :, None] * self.grid.zeta)

    def A_from_factors(self, at_val, pxU_val):
        return -at_val[..., None] * self._za - pxU_val[..., None] * self._zb

    def B_from_factors(self, at_val, b1_val):
        return at_val[..., None] + b1_val[..., None] * self.grid.zeta

    def sup_A_over_one_minus_zeta(self):
        """sup |A| / (1-zeta) = sup |at| zeta + |px/U| (1+zeta) <= |at| + 2|px/U|."""
        return float(np.max(np.abs(self.at)) + 2.0 * np.max(np.abs(self.px_over_U)))

    def sup_B(self):
        zz = self.grid.zeta
        b = (self.at[:, :, :, None] + self.b1[:, :, :, None] * zz)
        return float(np.max(np.abs(b)))


def coefficients(flow, grid):
    """Sample the outer data and assemble the transformed coefficients.

    Euler-data derivatives use fourth-order stencils: the trace recursion
    re-differentiates these factors up to four more times in t, so their
    pointwise error has to sit well below the compatibility tolerance.
    """
    U = flow.euler.sample_U(grid.t, grid.xi, grid.eta)
    p = flow.euler.sample_p(grid.t, grid.xi, grid.eta)
    K = flow.k.sample(grid.xi, grid.eta)
    U_t = diff_axis(U, grid.dt, axis=0, order=1, acc=4)
    U_x = diff_axis(U, grid.dxi, axis=1, order=1, acc=4)
    U_y = diff_axis(U, grid.deta, axis=2, order=1, acc=4)
    p_x = diff_axis(p, grid.dxi, axis=1, order=1, acc=4)
    K_y = diff_axis(K, grid.deta, axis=1, order=1, acc=4)
    at = U_t / U
    b1 = U_x + K[None] * U_y - U * K_y[None]
    return CroccoCoefficients(grid, U, K, K_y, at, b1, p_x / U)


# ---------------------------------------------------------------------------
# trace recursions

def initial_time_traces(W0, flow, grid, order=5, coeffs=None):
    """Time-derivative traces of W at t = 0, read off the equation.

    Differentiating the transformed equation i times in t and evaluating
    at t = 0 expresses W_0^{i+1} through lower traces:

        W_0^{i+1} = - sum_j C(i,j) [ zeta U^(i-j) (d_xi + k d_eta) W_0^j
                                     + A^(i-j) d_zeta W_0^j + B^(i-j) W_0^j
                                     - d2_zeta W_0^{i-j} * Q_j ],

    with Q_j = sum_l C(j,l) W_0^l W_0^{j-l} and X^(m) the m-th time
    derivative of the coefficient at t = 0.  Returns [W_0^0 .. W_0^order].
    """
    if coeffs is None:
        coeffs = coefficients(flow, grid)
    W0 = np.asarray(W0, dtype=float)
    if W0.shape != (grid.n_xi, grid.n_eta, grid.n_zeta):
        raise MissingSamples(f"W0 shape {W0.shape} does not match grid")
    zz = grid.zeta
    K = coeffs.K[:, :, None]
    # coefficient factor time-derivatives at t = 0
    at0, b10, pxU0, U0 = [], [], [], []
    for m in range(order):
        if m == 0:
            at0.append(coeffs.at[0]); b10.append(coeffs.b1[0])
            pxU0.append(coeffs.px_over_U[0]); U0.append(coeffs.U[0])
        else:
            at0.append(cheb_diff(coeffs.at, grid.t, axis=0, order=m)[0])
            b10.append(cheb_diff(coeffs.b1, grid.t, axis=0, order=m)[0])
            pxU0.append(cheb_diff(coeffs.px_over_U, grid.t, axis=0, order=m)[0])
            U0.append(cheb_diff(coeffs.U, grid.t, axis=0, order=m)[0])
    A0 = [coeffs.A_from_factors(at0[m], pxU0[m]) for m in range(order)]
    B0 = [coeffs.B_from_factors(at0[m], b10[m]) for m in range(order)]

    Ws = [W0]
    d_xi = [cheb_diff(W0, grid.xi, axis=0)]
    d_eta = [cheb_diff(W0, grid.eta, axis=1)]
    d_z = [cheb_diff(W0, zz, axis=2)]
    d_zz = [cheb_diff(W0, zz, axis=2, order=2)]
    Q = [W0 * W0]
    for i in range(order):
        acc = np.zeros_like(W0)
        for j in range(i + 1):
            m = i - j
            acc += comb(i, j) * (
                U0[m][:, :, None] * zz * (d_xi[j] + K * d_eta[j])
                + A0[m] * d_z[j]
                + B0[m] * Ws[j]
                - d_zz[i - j] * Q[j])
        Wn = -acc
        Ws.append(Wn)
        if i + 1 < order:
            d_xi.append(cheb_diff(Wn, grid.xi, axis=0))
            d_eta.append(cheb_diff(Wn, grid.eta, axis=1))
            d_z.append(cheb_diff(Wn, zz, axis=2))
        d_zz.append(cheb_diff(Wn, zz, axis=2, order=2))
        Q.append(sum(comb(i + 1, l) * Ws[l] * Ws[i + 1 - l] for l in range(i + 2)))
    return Ws


class EdgeTraces:
    """Normal-derivative traces and defect fields on one inflow edge."""

    def __init__(self, edge, W1, f):
        self.edge = edge
        self.W1 = W1            # list of (n_t, m_edge, n_zeta)
        self.f = f              # list of defect fields, f[i] multiplies W1[i+1]
        self.mask = edge.kind == "inflow"


def _edge_slice(arr, edge):
    """Restrict a (t, xi, eta) array to the edge nodes -> (t, m_edge)."""
    if edge.name == "left":
        return arr[:, 0, :]
    if edge.name == "right":
        return arr[:, -1, :]
    if edge.name == "bottom":
        return arr[:, :, 0]
    return arr[:, :, -1]


def _normal_derivs(arr, edge, grid, order):
    """[d_n^m arr at the edge, m = 0..order] along the outward normal."""
    if edge.name in ("left", "right"):
        axis, nodes, ncomp = 1, grid.xi, edge.normal[0]
    else:
        axis, nodes, ncomp = 2, grid.eta, edge.normal[1]
    out = [_edge_slice(arr, edge)]
    for m in range(1, order + 1):
        out.append(_edge_slice(cheb_diff(arr, nodes, axis=axis, order=m), edge) * ncomp ** m)
    return out


def inflow_traces(W1, flow, grid, order=4, coeffs=None, ftol=5e-3):
    """Normal-derivative traces on the inflow edges from supplied data.

    ``W1`` maps edge names to data arrays of shape (n_t, m_edge, n_zeta).
    Differentiating the equation along the outward normal and solving for
    the highest normal derivative gives

        zeta (U k_n) W_1^{i+1} = f_{i+1},

    where f_{i+1} collects time, tangential and zeta derivatives of lower
    traces.  The division is removable (f vanishes at zeta = 0 for
    compatible data); the wall node takes the one-sided limit
    d_zeta f / (U k_n).  Data whose defect does not vanish at the wall
    raise IncompatibleInflowData.
    """
    if coeffs is None:
        coeffs = coefficients(flow, grid)
    bc = flow.boundary(grid)
    zz = grid.zeta
    out = {}
    for name, data in W1.items():
        edge = bc.edges[name]
        if not edge.has_inflow:
            raise CharacteristicEdge(f"edge {name} has no inflow segment")
        data = np.asarray(data, dtype=float)
        m_edge = edge.nodes.size
        if data.shape != (grid.n_t, m_edge, grid.n_zeta):
            raise MissingSamples(f"edge {name}: data shape {data.shape} != "
                                 f"{(grid.n_t, m_edge, grid.n_zeta)}")
        mask = edge.kind == "inflow"
        nx, ny = edge.normal
        tx, ty = edge.tau
        Ukn_field = coeffs.U * (nx + coeffs.K[None] * ny)
        Ukt_field = coeffs.U * (tx + coeffs.K[None] * ty)
        Ukn = _normal_derivs(Ukn_field, edge, grid, order - 1)
        Ukt = _normal_derivs(Ukt_field, edge, grid, order - 1)
        at_n = _normal_derivs(coeffs.at, edge, grid, order - 1)
        b1_n = _normal_derivs(coeffs.b1, edge, grid, order - 1)
        pxU_n = _normal_derivs(coeffs.px_over_U, edge, grid, order - 1)
        A_n = [coeffs.A_from_factors(at_n[m], pxU_n[m]) for m in range(order)]
        B_n = [coeffs.B_from_factors(at_n[m], b1_n[m]) for m in range(order)]
        tau_nodes = edge.nodes

        # zeta derivatives of evolved edge data use compact finite
        # differences: the data is only mesh-accurate, and a global
        # polynomial fit turns its Chebyshev tail into O(1e-2) endpoint
        # noise in the second derivative, poisoning the wall gate
        dz = grid.dzeta
        W1s = [data]
        d_tau = [cheb_diff(data, tau_nodes, axis=1) * edge.tau_sign]
        d_z = [diff_axis(data, dz, axis=2, order=1, acc=4)]
        d_zz = [diff_axis(data, dz, axis=2, order=2, acc=4)]
        Q = [data * data]
        fs = []
        scale_floor = 0.0
        for i in range(order):
            pieces = [cheb_diff(W1s[i], grid.t, axis=0)]
            for j in range(i):
                pieces.append(comb(i, j) * (Ukn[i - j][:, :, None] * zz) * W1s[j + 1])
            for j in range(i + 1):
                m = i - j
                pieces.append(comb(i, j) * (Ukt[m][:, :, None] * zz) * d_tau[j])
                pieces.append(comb(i, j) * A_n[m] * d_z[j])
                pieces.append(comb(i, j) * B_n[m] * W1s[j])
                pieces.append(-comb(i, j) * d_zz[i - j] * Q[j])
            f = -sum(pieces)
            fs.append(f)
            wall = float(np.max(np.abs(f[:, mask, 0]))) if mask.any() else 0.0
            # the last rows sit under one-sided stencils at the degenerate
            # top boundary, where evolved data has limited smoothness (the
            # diffusion coefficient vanishes quadratically and the top acts
            # as an interface): their defect converges like dz^1.5 and
            # measures stencil error, not inflow variation.  The decay
            # family certifies the top behaviour separately
            supf = float(np.max(np.abs(f[:, mask, :-3]))) if mask.any() else 0.0
            # the defect is a cancellation of the assembled terms; when it
            # lands at their numerical noise floor the bounded trace is zero
            # (x/y-independent data), and dividing noise by zeta would only
            # manufacture garbage for the next level to differentiate
            # the scale never shrinks with order: each level inherits the
            # previous levels' cancellation noise through its derivatives,
            # so when all current terms are tiny (zero traces so far) the
            # defect must still be measured against the scale that produced
            # the inputs, or noise gets divided as if it were data
            term_scale = max(max(float(np.max(np.abs(p))) for p in pieces),
                             scale_floor)
            scale_floor = term_scale
            if supf <= NOISE_RTOL * term_scale + 1e-300:
                Wn = np.zeros_like(f)
            else:
                if wall > ftol * max(1.0, supf):
                    raise IncompatibleInflowData(
                        f"edge {name}: order-{i + 1} defect does not vanish at the "
                        f"wall (|f(0)|={wall:.3e} vs scale {supf:.3e}); no bounded "
                        "trace exists")
                # remove the gated wall residue before dividing: the exact
                # defect vanishes at zeta=0, and leaving the residual in
                # would put an f(0)/zeta tail in the quotient whose second
                # derivative wrecks the next level's assembly
                fdiv = f - f[:, :, :1] * (1.0 - zz) ** 2
                denom = Ukn[0][:, :, None] * zz
                Wn = np.zeros_like(f)
                with np.errstate(divide="ignore", invalid="ignore"):
                    Wn[:, :, 1:] = fdiv[:, :, 1:] / denom[:, :, 1:]
                dfdz0 = diff_axis(fdiv, dz, axis=2, order=1, acc=4)[:, :, 0]
                with np.errstate(divide="ignore", invalid="ignore"):
                    Wn[:, :, 0] = dfdz0 / Ukn[0]
                Wn[:, ~mask, :] = 0.0
            W1s.append(Wn)
            if i + 1 < order:
                d_tau.append(cheb_diff(Wn, tau_nodes, axis=1) * edge.tau_sign)
                d_z.append(diff_axis(Wn, dz, axis=2, order=1, acc=4))
            d_zz.append(diff_axis(Wn, dz, axis=2, order=2, acc=4))
            Q.append(sum(comb(i + 1, l) * W1s[l] * W1s[i + 1 - l] for l in range(i + 2)))
        out[name] = EdgeTraces(edge, W1s, fs)
    return out


def taylor_edge_traces(W0s, flow, grid, order=4):
    """Inflow traces synthesized from the initial cascade in time-Taylor form.

    For problems analytic in time,

        W_1^j(t) = sum_i t^i / i!  d_n^j W_0^i |_edge

    is corner-compatible by construction and involves no removable division,
    which matters when the genuine x/y dependence of the data makes the
    defect quotient of ``inflow_traces`` noise-limited at the wall.  The
    truncation error is O(t^{p+1}) with p the cascade depth, so the horizon
    has to be short relative to the cascade growth rate.
    """
    bc = flow.boundary(grid)
    tt = grid.t[:, None, None]
    fact = 1.0
    out = {}
    for name, edge in bc.edges.items():
        if not edge.has_inflow:
            continue
        if edge.name in ("left", "right"):
            axis, nodes, ncomp = 0, grid.xi, edge.normal[0]
        else:
            axis, nodes, ncomp = 1, grid.eta, edge.normal[1]
        idx = 0 if edge.name in ("left", "bottom") else -1
        W1s = []
        for j in range(order + 1):
            acc = 0.0
            fact = 1.0
            for i, W0i in enumerate(W0s):
                if i > 0:
                    fact *= i
                d = W0i if j == 0 else \
                    cheb_diff(W0i, nodes, axis=axis, order=j) * ncomp ** j
                sl = d[idx] if axis == 0 else d[:, idx]
                acc = acc + tt ** i / fact * sl[None]
            W1s.append(acc)
        out[name] = EdgeTraces(edge, W1s, [])
    return out


class TraceSet:
    """Initial and inflow traces for one problem, plus the profile bound M."""

    def __init__(self, grid, W0, edges):
        self.grid = grid
        self.W0 = W0                    # list [W_0^0 .. W_0^order]
        self.edges = edges              # dict name -> EdgeTraces
        self._M = None

    @property
    def order0(self):
        return len(self.W0) - 1

    @property
    def order1(self):
        any_edge = next(iter(self.edges.values()), None)
        return len(any_edge.W1) - 1 if any_edge else 0

    def scan_M(self, zeta_cut=ZETA_MAX_DEFAULT):
        """Smallest M with M^-1 (1-zeta) <= data <= M (1-zeta) below the cutoff.

        Node ratios over zeta <= zeta_cut, with the zeta -> 1 limit
        appended as the fitted slope -W_zeta(1) for the initial profile
        and the t = 0 inflow rows.
        """
        zz = self.grid.zeta
        sel = zz <= zeta_cut + 1e-14
        candidates = []

        def ratios(profile2d, zsel):
            w = profile2d[..., zsel]
            if np.any(w <= 0.0):
                return np.inf
            r = w / (1.0 - zz[zsel])
            return max(float(r.max()), float((1.0 / r).max()))

        W00 = self.W0[0]
        candidates.append(ratios(W00, sel))
        lim = -cheb_diff(W00, zz, axis=-1)[..., -1]
        if np.any(lim <= 0.0):
            candidates.append(np.inf)
        else:
            candidates.append(float(lim.max()))
            candidates.append(float((1.0 / lim).max()))
        for et in self.edges.values():
            if not et.mask.any():
                continue
            w10 = et.W1[0][:, et.mask, :]
            candidates.append(ratios(w10, sel))
            lim1 = -cheb_diff(et.W1[0][0][et.mask], zz, axis=-1)[..., -1]
            if np.any(lim1 <= 0.0):
                candidates.append(np.inf)
            else:
                candidates.append(float(lim1.max()))
                candidates.append(float((1.0 / lim1).max()))
        M = max(candidates) if candidates else np.inf
        self._M = max(M, 1.0)
        return self._M

    @property
    def M(self):
        if self._M is None:
            self.scan_M()
        return self._M

    def trace_scale(self, s):
        """Magnitude of order-s trace objects, for relative tolerances."""
        s0 = min(s, self.order0)
        vals = [1.0, float(np.max(np.abs(self.W0[s0])))]
        s1 = min(s, self.order1)
        for et in self.edges.values():
            if et.mask.any():
                vals.append(float(np.max(np.abs(et.W1[s1][:, et.mask, :]))))
        return max(vals)


class CompatCondition:
    """One checked condition: family, location and measured violation."""

    def __init__(self, family, label, edge, violation, tol):
        self.family = family
        self.label = label
        self.edge = edge
        self.violation = violation
        self.tol = tol
        self.passed = violation <= tol

    def __repr__(self):
        mark = "ok" if self.passed else "FAIL"
        where = f"@{self.edge}" if self.edge else ""
        return f"[{mark}] {self.family} {self.label}{where}: {self.violation:.3e} (tol {self.tol:.3e})"


class CompatReport:
    """Outcome of the full compatibility check."""

    def __init__(self, conditions, M):
        self.conditions = conditions
        self.M = M
        self.failures = [c for c in conditions if not c.passed]
        self.passed = bool(not self.failures and np.isfinite(M))

    def worst(self):
        if not self.failures:
            return None
        return max(self.failures, key=lambda c: c.violation / max(c.tol, 1e-300))

    def __str__(self):
        n = len(self.conditions)
        if self.passed:
            return f"compatibility: pass ({n} conditions, M={self.M:.6g})"
        w = self.worst()
        return (f"compatibility: FAIL {len(self.failures)}/{n} conditions, "
                f"worst {w.family} {w.label} violation {w.violation:.3e} "
                f"(tol {w.tol:.3e}), M={self.M:.6g}")


def check_compatibility(traces, flow, grid, rtol=5e-3, coeffs=None,
                        corner_depth=5, decay_depth=3, wall_depth=2):
    """Verify corner, decay and wall compatibility of a trace set.

    Families checked (all sampling-based, Chebyshev-fitted derivatives):

    corner  mixed traces agree where the initial face meets an inflow
            edge: d_zeta^m d_tau^l d_n^j W_0^i = d_zeta^m d_tau^l d_t^i W_1^j
            at t = 0, for i, j <= 4 and m + l + i + j <= corner_depth.
    decay   all traces and their tangential derivatives vanish at
            zeta = 1 up to total order decay_depth.
    wall    the quadratic wall flux matches the pressure data:
            d_zeta of the trace square-sums equals twice the matching
            derivative of p_x/U, to total order wall_depth.

    Tolerances are relative to the size of same-order trace objects: the
    traces grow factorially with order, so a fixed absolute tolerance
    would either pass garbage at low order or fail honest data at high
    order.  Returns a CompatReport carrying every condition and the
    scanned profile bound M.
    """
    if coeffs is None:
        coeffs = coefficients(flow, grid)
    zz = grid.zeta
    conds = []
    order0 = traces.order0
    order1 = traces.order1
    M = traces.scan_M()
    scale_cache = {}

    def tscale(s):
        if s not in scale_cache:
            scale_cache[s] = traces.trace_scale(s)
        return scale_cache[s]

    def add(family, label, edge, L, R, s_eff, floor=0.0):
        lsup = float(np.max(np.abs(L)))
        if R is None:
            # one-sided (decay) condition: the value itself is the violation,
            # so only the trace magnitude may relax the tolerance
            viol = lsup
            scale = max(1.0, 1e-6 * tscale(s_eff))
        else:
            rsup = float(np.max(np.abs(R)))
            viol = float(np.max(np.abs(L - R)))
            scale = max(lsup, rsup, 1.0, 1e-6 * tscale(s_eff))
        conds.append(CompatCondition(family, label, edge, viol, rtol * scale + floor))

    # ---- corner family ----------------------------------------------------
    # time jets of the inflow data and wall jets of both sides come from
    # local least-squares fits: pointwise high-order stencils would amplify
    # the data's mesh-level tail past any usable tolerance
    for name, et in traces.edges.items():
        edge = et.edge
        if not et.mask.any():
            continue
        mask = et.mask
        if edge.name in ("left", "right"):
            axis, nodes, ncomp = 0, grid.xi, edge.normal[0]
        else:
            axis, nodes, ncomp = 1, grid.eta, edge.normal[1]
        # d_n^j W_0^i restricted to the edge
        En = {}
        for i in range(order0 + 1):
            for j in range(order1 + 1):
                if i + j > corner_depth or i > 4 or j > 4:
                    continue
                if j == 0:
                    d = traces.W0[i]
                else:
                    d = cheb_diff(traces.W0[i], nodes, axis=axis, order=j) * ncomp ** j
                if edge.name == "left":
                    En[(i, j)] = d[0]
                elif edge.name == "right":
                    En[(i, j)] = d[-1]
                elif edge.name == "bottom":
                    En[(i, j)] = d[:, 0]
                else:
                    En[(i, j)] = d[:, -1]
        # d_t^i W_1^j at t = 0: narrow window and high fit degree, because
        # the trace cascade grows near-factorially and the data's time
        # analyticity scale is short compared to the horizon.  The i = 0
        # jet is the t = 0 slice itself: any fit would replace an exact
        # value with one carrying amplifiable rounding
        Et = {}
        gt = {}
        eps1 = {}
        for j in range(order1 + 1):
            imax = min(4, order0, corner_depth - j)
            if imax < 0:
                continue
            Et[(0, j)] = et.W1[j][0]
            gt[(0, j)] = 1.0
            # per-sample noise scale of this data channel: the mesh-rounding
            # base, or the roughness the data actually carries over the jet
            # window, whichever is larger.  Sixth differences annihilate the
            # smooth content the fits resolve and respond with weight
            # C(6,3) = 20 to an isolated off-manifold sample, so evolved
            # data self-reports when its wall row cannot support deep jets
            # while genuine low-order defects, being smooth, leave the floor
            # alone
            win_dat = et.W1[j][:22][:, mask][..., :16]
            r6 = np.diff(win_dat, 6, axis=0)
            rough = float(np.max(np.abs(r6))) / 20.0 if r6.size else 0.0
            eps1[j] = max(MESH_EPS * np.max(np.abs(et.W1[j])), MESH_EPS, rough)
            if imax >= 1:
                tj, gj = poly_jets(et.W1[j], grid.t, imax, axis=0,
                                   win=16, deg=imax + 7, return_gains=True)
                for i in range(1, imax + 1):
                    Et[(i, j)] = tj[i]
                    gt[(i, j)] = gj[i]
        tau_nodes = edge.nodes
        # noise gains of the tangential and normal derivative maps, per
        # order: rows of the map applied to an identity are the sample
        # weights of each output node
        def diff_gains(pts, kmax):
            g = [1.0]
            eye = np.eye(len(pts))
            for k in range(1, kmax + 1):
                D = cheb_diff(eye, pts, axis=0, order=k)
                g.append(float(np.max(np.sqrt(np.sum(D ** 2, axis=1)))))
            return g

        gtau = diff_gains(tau_nodes, corner_depth)
        gnrm = diff_gains(nodes, min(order1, corner_depth))
        r6 = np.diff(traces.W0[0], 6, axis=axis)
        rough0 = float(np.max(np.abs(r6))) / 20.0 if r6.size else 0.0
        eps0 = max(MESH_EPS * np.max(np.abs(traces.W0[0])), MESH_EPS, rough0)
        for (i, j) in En:
            if (i, j) not in Et:
                continue
            rem = corner_depth - i - j
            # wall jets from the same window fit on both sides.  The fit
            # degree tracks the content degree of level i + j (each level
            # adds 2 through the quadratic diffusion term), so the fit is
            # exact on the trace side while keeping the degree, and with it
            # the (1/window)^m noise amplification, as low as the condition
            # allows: deep jets (large m) only pair with shallow levels
            dg = min(6 + 2 * (i + j), 12)
            Lz, gz = poly_jets(En[(i, j)], zz, rem, axis=-1, win=16, deg=dg,
                               return_gains=True)
            Rz = poly_jets(Et[(i, j)], zz, rem, axis=-1, win=16, deg=dg)
            # certification floor: the worse of the two extraction channels
            # (time jets of the inflow data, normal derivatives of the
            # initial data) times the shared wall-jet and tangential gains.
            # Below this level a condition compares noise against noise and
            # cannot certify anything on either side
            amp = max(gt[(i, j)] * eps1[j], gnrm[j] * eps0)
            for mz in range(rem + 1):
                for lt in range(rem - mz + 1):
                    L, R = Lz[mz], Rz[mz]
                    if lt:
                        L = cheb_diff(L, tau_nodes, axis=0, order=lt) * edge.tau_sign ** lt
                        R = cheb_diff(R, tau_nodes, axis=0, order=lt) * edge.tau_sign ** lt
                    add("corner", f"i={i},j={j},m={mz},l={lt}", name,
                        L[mask], R[mask], i + j,
                        floor=amp * gz[mz] * gtau[lt])

    # ---- decay family -----------------------------------------------------
    for i in range(min(decay_depth, order0) + 1):
        base = traces.W0[i]
        for jx in range(decay_depth - i + 1):
            for le in range(decay_depth - i - jx + 1):
                d = base
                if jx:
                    d = cheb_diff(d, grid.xi, axis=0, order=jx)
                if le:
                    d = cheb_diff(d, grid.eta, axis=1, order=le)
                add("decay", f"W0:i={i},dxi={jx},deta={le}", None, d[..., -1], None, i)
    for name, et in traces.edges.items():
        if not et.mask.any():
            continue
        for s in range(min(decay_depth, order1) + 1):
            base = et.W1[s]
            for q in range(decay_depth - s + 1):
                for r in range(decay_depth - s - q + 1):
                    d = base
                    if q:
                        d = cheb_diff(d, grid.t, axis=0, order=q)
                    if r:
                        d = cheb_diff(d, et.edge.nodes, axis=1, order=r) * et.edge.tau_sign ** r
                    add("decay", f"W1:s={s},dt={q},dtau={r}", name,
                        d[:, et.mask, -1], None, q + s)

    # ---- wall family ------------------------------------------------------
    pxU = coeffs.px_over_U
    for i in range(wall_depth + 1):
        Gi = sum(comb(i, j) * traces.W0[j] * traces.W0[i - j] for j in range(i + 1))
        dG = cheb_diff(Gi, zz, axis=2)[:, :, 0]
        if i == 0:
            R0 = 2.0 * pxU[0]
        else:
            R0 = 2.0 * cheb_diff(pxU, grid.t, axis=0, order=i)[0]
        for jx in range(wall_depth - i + 1):
            for le in range(wall_depth - i - jx + 1):
                L = dG
                R = R0
                if jx:
                    L = cheb_diff(L, grid.xi, axis=0, order=jx)
                    R = cheb_diff(R, grid.xi, axis=0, order=jx)
                if le:
                    L = cheb_diff(L, grid.eta, axis=1, order=le)
                    R = cheb_diff(R, grid.eta, axis=1, order=le)
                add("wall", f"W0:i={i},dxi={jx},deta={le}", None, L, R, i + 1)
    for name, et in traces.edges.items():
        if not et.mask.any():
            continue
        edge = et.edge
        pxU_n = _normal_derivs(pxU, edge, grid, wall_depth)
        for m in range(min(wall_depth, order1) + 1):
            Gm = sum(comb(m, l) * et.W1[l] * et.W1[m - l] for l in range(m + 1))
            # evolved data: finite differences in zeta (see inflow_traces)
            dG = diff_axis(Gm, grid.dzeta, axis=2, order=1, acc=4)[:, :, 0]
            for i in range(wall_depth - m + 1):
                for j in range(wall_depth - m - i + 1):
                    L = dG
                    R = 2.0 * pxU_n[m]
                    if i:
                        L = cheb_diff(L, grid.t, axis=0, order=i)
                        R = cheb_diff(R, grid.t, axis=0, order=i)
                    if j:
                        L = cheb_diff(L, edge.nodes, axis=1, order=j) * edge.tau_sign ** j
                        R = cheb_diff(R, edge.nodes, axis=1, order=j) * edge.tau_sign ** j
                    add("wall", f"W1:m={m},dt={i},dtau={j}", name,
                        L[:, et.mask], R[:, et.mask], m + i + 1)

    return CompatReport(conds, M)


def build_traces(W0, W1, flow, grid, order0=5, order1=4, coeffs=None):
    """Convenience: run both recursions and assemble a TraceSet."""
    if coeffs is None:
        coeffs = coefficients(flow, grid)
    W0s = initial_time_traces(W0, flow, grid, order=order0, coeffs=coeffs)
    edges = inflow_traces(W1, flow, grid, order=order1, coeffs=coeffs)
    if not edges:
        raise MissingTraces("no inflow data supplied")
    return TraceSet(grid, W0s, edges)
