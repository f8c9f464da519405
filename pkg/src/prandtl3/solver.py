"""Constructive iteration for the transformed degenerate parabolic problem.

Each iterate solves a linear equation whose diffusion coefficient and
wall flux weight are frozen at the previous iterate (globally in time),

    W^n_t + zeta U (W^n_xi + k W^n_eta) + A W^n_zeta + B W^n
        = (W^{n-1})^2 W^n_zetazeta,
    W^{n-1} W^n_zeta |_{zeta=0} = p_x/U,      W^n |_{zeta=1} = 0,

marched by an operator split: explicit slope-limited upwind transport in
(xi, eta), implicit backward-Euler in (t, zeta) solved column by column
with a batched tridiagonal elimination.  Convergence is monitored in a
weighted sup norm; comparison envelopes certify the positivity/linear
decay corridor of the converged field.
"""

import numpy as np

from .crocco import check_compatibility, coefficients
from .errors import (CFLViolation, CompatibilityGateFailed,
                     InfeasibleConstants, NoConvergence, SingularRow)
from .grids import cheb_diff, diff_axis

DEFAULT_OPTS = {
    "max_picard": 40,
    "tol_sup": 1e-9,
    "cfl_safety": 0.9,
    "floor_scale": 1e-8,
    "compat_rtol": 5e-3,
    "max_halvings": 6,
    "track_functionals": True,
    "skip_gate": False,
    "margin": 1.1,
}


def _merge_opts(opts):
    out = dict(DEFAULT_OPTS)
    if opts:
        unknown = set(opts) - set(DEFAULT_OPTS)
        if unknown:
            raise ValueError(f"unknown solve options: {sorted(unknown)}")
        out.update(opts)
    if out["max_picard"] < 1:
        raise ValueError("max_picard must be at least 1")
    if not out["tol_sup"] > 0:
        raise ValueError("tol_sup must be positive")
    return out


# ---------------------------------------------------------------------------
# comparison envelopes

def _quintic(x0, x1, v0, d0, s0, v1, d1, s1):
    """Quintic Hermite with value/slope/curvature prescribed at both ends."""
    h = x1 - x0
    A = np.array([
        [1, 0, 0, 0, 0, 0],
        [0, 1, 0, 0, 0, 0],
        [0, 0, 2, 0, 0, 0],
        [1, h, h ** 2, h ** 3, h ** 4, h ** 5],
        [0, 1, 2 * h, 3 * h ** 2, 4 * h ** 3, 5 * h ** 4],
        [0, 0, 2, 6 * h, 12 * h ** 2, 20 * h ** 3],
    ], dtype=float)
    coef = np.linalg.solve(A, np.array([v0, d0, s0, v1, d1, s1], dtype=float))

    def ev(x, der=0):
        s = np.asarray(x, dtype=float) - x0
        p = np.polynomial.polynomial.polyder(coef, der) if der else coef
        return np.polynomial.polynomial.polyval(s, p)

    return ev


class Envelope:
    """Lower/upper comparison pair V1 = m phi(zeta) e^{-alpha t},
    V2 = C (1-zeta) e^{beta t} bracketing every iterate."""

    def __init__(self, constants, phi, dphi, d2phi, grid):
        self.constants = constants
        self.phi = phi
        self.dphi = dphi
        self.d2phi = d2phi
        self.grid = grid
        c = constants
        tt = grid.t[:, None]
        zz = grid.zeta[None, :]
        self.V1 = c["m"] * phi(grid.zeta)[None, :] * np.exp(-c["alpha"] * tt)
        self.V2 = c["C"] * (1.0 - zz) * np.exp(c["beta"] * tt)

    def certify(self, W, slack=1e-12):
        """Count nodewise corridor violations of a solved field."""
        V1 = self.V1[:, None, None, :]
        V2 = self.V2[:, None, None, :]
        low = W < V1 - slack
        high = W > V2 + slack
        return {
            "violations": int(np.count_nonzero(low) + np.count_nonzero(high)),
            "low_violations": int(np.count_nonzero(low)),
            "high_violations": int(np.count_nonzero(high)),
            "min_upper_gap": float(np.min(V2 - W)),
            "min_lower_gap": float(np.min(W - V1)),
        }


def envelope(flow, M, grid, coeffs=None, margin=1.1, crest_gap=0.05):
    """Construct admissible envelope constants and profiles for bound M.

    The constraint set ties the constants together:
      exp(alpha1 delta0) <= 2,  4 m <= 1/M,  (m^2/4) alpha1 > |p_x/U|,
      C > max(M, (2/m)|p_x/U|),  beta >= |B| + |A/(1-zeta)|,
      alpha >= |B| + max(delta0^-1 (|A phi'| + C^2 e^{2 beta T} |phi''|),
                         |A/(1-zeta)|).
    We take m = 1/(4M), pick the smallest alpha1 compatible with the flux
    constraint, and then shrink delta0 = log(sqrt 2)/alpha1 so the wall
    exponential stays below 2 with margin; everything else gets a
    multiplicative safety factor.  The profile phi rises exponentially,
    connects through two quintic pieces with continuous curvature, and
    descends as a multiple of (1-zeta); admissibility (delta0 <= phi <= 2
    below 1-delta0, and m phi <= (1/M)(1-zeta)) is verified on a fine
    probe and InfeasibleConstants is raised on any failure.
    """
    if coeffs is None:
        coeffs = coefficients(flow, grid)
    if not np.isfinite(M) or M < 1.0:
        raise InfeasibleConstants(f"need a finite profile bound M >= 1, got {M}")
    m = 1.0 / (4.0 * M)
    sup_px = float(np.max(np.abs(coeffs.px_over_U)))
    alpha1 = max(8.0 * np.log(2.0), margin * 4.0 * sup_px / m ** 2)
    delta0 = np.log(np.sqrt(2.0)) / alpha1
    crest = 2.0 - crest_gap
    # middle connection: exponential end -> flat crest -> (1-zeta) multiple
    e_end = np.exp(alpha1 * delta0)
    rise = _quintic(delta0, 2 * delta0,
                    e_end, alpha1 * e_end, alpha1 ** 2 * e_end,
                    crest, 0.0, 0.0)
    zL, zR = 2 * delta0, 1.0 - delta0
    H0 = crest / (1.0 - zL)
    H = _quintic(zL, zR,
                 H0, H0 / (1.0 - zL), 2.0 * (H0 / (1.0 - zL)) / (1.0 - zL),
                 1.0, 0.0, 0.0)

    def phi(z, der=0):
        z = np.asarray(z, dtype=float)
        out = np.empty_like(z)
        lo = z < delta0
        md = (z >= delta0) & (z < zL)
        hd = (z >= zL) & (z < zR)
        tp = z >= zR
        if der == 0:
            out[lo] = np.exp(alpha1 * z[lo])
            out[md] = rise(z[md])
            out[hd] = H(z[hd]) * (1.0 - z[hd])
            out[tp] = 1.0 - z[tp]
        elif der == 1:
            out[lo] = alpha1 * np.exp(alpha1 * z[lo])
            out[md] = rise(z[md], 1)
            out[hd] = H(z[hd], 1) * (1.0 - z[hd]) - H(z[hd])
            out[tp] = -1.0
        elif der == 2:
            out[lo] = alpha1 ** 2 * np.exp(alpha1 * z[lo])
            out[md] = rise(z[md], 2)
            out[hd] = H(z[hd], 2) * (1.0 - z[hd]) - 2.0 * H(z[hd], 1)
            out[tp] = 0.0
        return out

    zp = np.linspace(0.0, 1.0, 4097)
    ph = phi(zp)
    mid = zp <= zR
    if np.any(ph[mid] < delta0 * (1.0 - 1e-12)) or np.any(ph[mid] > 2.0 + 1e-12):
        raise InfeasibleConstants("connection profile leaves the [delta0, 2] corridor")
    if np.any(m * ph[:-1] > (1.0 / M) * (1.0 - zp[:-1]) * (1.0 + 1e-10)):
        raise InfeasibleConstants("lower envelope exceeds the data corridor at t=0")
    if np.any(ph < 0.0):
        raise InfeasibleConstants("connection profile is not nonnegative")

    sup_at = float(np.max(np.abs(coeffs.at)))
    sup_A_ratio = sup_at + 2.0 * sup_px          # bounds |A|/(1-zeta)
    sup_B = coeffs.sup_B()
    sup_A_phi1 = 0.0
    for it in range(grid.n_t):
        Asl = np.abs(coeffs.A_slice(it))
        sup_A_phi1 = max(sup_A_phi1, float(np.max(Asl * np.abs(phi(grid.zeta, 1)))))
    sup_d2phi = float(np.max(np.abs(phi(zp, 2))))
    C = margin * max(M, (2.0 / m) * sup_px)
    beta = margin * (sup_B + sup_A_ratio)
    alpha = margin * (sup_B + max(
        (sup_A_phi1 + C ** 2 * np.exp(2.0 * beta * grid.t_max) * sup_d2phi) / delta0,
        sup_A_ratio))
    constants = {
        "M": M, "m": m, "alpha1": alpha1, "delta0": delta0,
        "C": C, "beta": beta, "alpha": alpha,
        "sup_B": sup_B, "sup_A_ratio": sup_A_ratio, "sup_px_over_U": sup_px,
    }
    return Envelope(constants, lambda z: phi(z, 0), lambda z: phi(z, 1),
                    lambda z: phi(z, 2), grid)


# ---------------------------------------------------------------------------
# initial guess

def _smoothstep(s):
    """Quintic smoothstep 1 -> 0 on [0, 1] with flat ends."""
    s = np.clip(s, 0.0, 1.0)
    return 1.0 - s ** 3 * (10.0 - 15.0 * s + 6.0 * s ** 2)


def build_initial_guess(traces, flow, grid, M=None, taylor_order=4):
    """Corner-consistent starting field from the trace data.

    Boolean-sum blend of the time Taylor polynomial of the initial traces
    with, per inflow edge, the normal Taylor polynomial of the edge traces
    minus the mixed corner polynomial (so each face reproduces its data
    exactly).  The result is clamped to the corridor
    [(1/M)(1-zeta), M(1-zeta)] and the data faces are re-imposed.
    """
    if M is None:
        M = traces.M
    n_t, n_xi, n_eta, n_zeta = grid.shape()
    zz = grid.zeta
    fact = [1.0, 1.0, 2.0, 6.0, 24.0]
    p0 = min(taylor_order, traces.order0)
    tpow = [(grid.t ** i / fact[i])[:, None, None, None] for i in range(p0 + 1)]
    W = sum(tpow[i] * traces.W0[i][None] for i in range(p0 + 1))

    for name, et in traces.edges.items():
        edge = et.edge
        p1 = min(taylor_order, len(et.W1) - 1)
        if edge.name in ("left", "right"):
            coord_ax, nvec = grid.xi, edge.normal[0]
            d = (coord_ax - edge.coord) * np.sign(nvec) * -1.0   # inward distance
            band = 0.5 * (grid.x_range[1] - grid.x_range[0])
        else:
            coord_ax, nvec = grid.eta, edge.normal[1]
            d = (coord_ax - edge.coord) * np.sign(nvec) * -1.0
            band = 0.5 * (grid.y_range[1] - grid.y_range[0])
        rho = _smoothstep(d / band)
        # displacement into the domain is -d n, so the Taylor factor is (-d)^j
        dsgn = [(-d) ** j / fact[j] for j in range(p1 + 1)]
        # normal-derivative corner coefficients of the initial traces
        if edge.name in ("left", "right"):
            nodes, axis = grid.xi, 0
        else:
            nodes, axis = grid.eta, 1
        corner = {}
        for i in range(p0 + 1):
            for j in range(p1 + 1):
                dn = traces.W0[i] if j == 0 else \
                    cheb_diff(traces.W0[i], nodes, axis=axis, order=j) * nvec ** j
                if edge.name == "left":
                    corner[(i, j)] = dn[0]
                elif edge.name == "right":
                    corner[(i, j)] = dn[-1]
                elif edge.name == "bottom":
                    corner[(i, j)] = dn[:, 0]
                else:
                    corner[(i, j)] = dn[:, -1]
        if edge.name in ("left", "right"):
            # edge data indexed by eta: broadcast over xi with the d factor
            WD = sum(dsgn[j][None, :, None, None] * et.W1[j][:, None, :, :]
                     for j in range(p1 + 1))
            WDT = sum(tpow[i] * dsgn[j][None, :, None, None]
                      * corner[(i, j)][None, None, :, :]
                      for i in range(p0 + 1) for j in range(p1 + 1))
            W = W + rho[None, :, None, None] * (WD - WDT)
        else:
            WD = sum(dsgn[j][None, None, :, None] * et.W1[j][:, :, None, :]
                     for j in range(p1 + 1))
            WDT = sum(tpow[i] * dsgn[j][None, None, :, None]
                      * corner[(i, j)][None, :, None, :]
                      for i in range(p0 + 1) for j in range(p1 + 1))
            W = W + rho[None, None, :, None] * (WD - WDT)

    W = np.clip(W, (1.0 / M) * (1.0 - zz), M * (1.0 - zz))
    # faces carry the data exactly
    W[0] = traces.W0[0]
    _pin_inflow(W, traces, slice(None))
    return W


def _pin_inflow(W, traces, tsel):
    """Overwrite inflow-edge columns with the data at the selected levels."""
    for name, et in traces.edges.items():
        mask = et.mask
        data = et.W1[0][tsel]
        if name == "left":
            W[tsel, 0, mask, :] = data[..., mask, :]
        elif name == "right":
            W[tsel, -1, mask, :] = data[..., mask, :]
        elif name == "bottom":
            W[tsel, mask, 0, :] = data[..., mask, :]
        else:
            W[tsel, mask, -1, :] = data[..., mask, :]


# ---------------------------------------------------------------------------
# slope-limited upwind transport

def _vanleer(a, b):
    ab = a * b
    s = a + b
    out = np.zeros_like(a)
    good = (ab > 0.0) & (np.abs(s) > 1e-300)
    out[good] = 2.0 * ab[good] / s[good]
    return out


def _upwind_deriv(W, h, speed, axis):
    """Slope-limited second-order upwind advective derivative along axis.

    Face states follow the sign of ``speed`` nodewise; boundary-adjacent
    nodes fall back to first order (zero limited slope), and nodes whose
    upwind neighbour is outside the grid use the one-sided interior
    difference (they are either pinned inflow columns or outflow nodes).
    """
    W = np.moveaxis(W, axis, 0)
    speed = np.moveaxis(speed, axis, 0)
    n = W.shape[0]
    dW = np.diff(W, axis=0) / h                    # (n-1, ...)
    sig = np.zeros_like(W)
    sig[1:-1] = _vanleer(dW[:-1], dW[1:])
    dpos = np.empty_like(W)
    dneg = np.empty_like(W)
    dpos[1:] = dW + 0.5 * (sig[1:] - sig[:-1])
    dpos[0] = dW[0]
    dneg[:-1] = dW - 0.5 * (sig[1:] - sig[:-1])
    dneg[-1] = dW[-1]
    out = np.where(speed >= 0.0, dpos, dneg)
    return np.moveaxis(out, 0, axis)


# ---------------------------------------------------------------------------
# batched tridiagonal elimination

def _thomas(a, b, c, d):
    """Solve tridiagonal systems along the last axis, batched over the rest."""
    n = b.shape[-1]
    cp = np.empty_like(b)
    dp = np.empty_like(b)
    cp[..., 0] = c[..., 0] / b[..., 0]
    dp[..., 0] = d[..., 0] / b[..., 0]
    for j in range(1, n):
        m = b[..., j] - a[..., j] * cp[..., j - 1]
        cp[..., j] = c[..., j] / m
        dp[..., j] = (d[..., j] - a[..., j] * dp[..., j - 1]) / m
    x = np.empty_like(b)
    x[..., -1] = dp[..., -1]
    for j in range(n - 2, -1, -1):
        x[..., j] = dp[..., j] - cp[..., j] * x[..., j + 1]
    return x


def cfl_bound(flow, grid, coeffs):
    """Largest stable time step of the explicit transport stage."""
    smax = float(np.max(np.abs(coeffs.U))) * max(1.0, float(np.max(np.abs(coeffs.K))))
    return min(grid.dxi, grid.deta) / max(smax, 1e-300)


def linear_step(W_prev, traces, coeffs, flow, grid, opts=None):
    """One linearized sweep: march the frozen-coefficient equation.

    ``W_prev`` supplies the lagged diffusion coefficient and wall flux
    weight at every time level.  Inflow columns are pinned to the data;
    the top row is homogeneous Dirichlet; the wall row imposes the lagged
    flux condition through a one-sided three-point stencil pre-eliminated
    against the first interior row, preserving the tridiagonal band.
    """
    o = _merge_opts(opts)
    dt, dz = grid.dt, grid.dzeta
    n_t, n_xi, n_eta, n_zeta = grid.shape()
    if dt > o["cfl_safety"] * cfl_bound(flow, grid, coeffs):
        raise CFLViolation(
            f"dt={dt:.3e} exceeds {o['cfl_safety']:.2f} x transport bound "
            f"{cfl_bound(flow, grid, coeffs):.3e}")
    zz = grid.zeta
    floor = o["floor_scale"] * np.maximum(1.0 - zz, 1e-30)
    K = coeffs.K
    W = np.empty(grid.shape())
    W[0] = traces.W0[0]
    _pin_inflow(W, traces, slice(0, 1))

    wall_weight = W_prev[:, :, :, 0]
    if np.any(wall_weight <= 0.0):
        raise SingularRow("lagged wall weight is nonpositive; cannot impose the flux row")

    for n in range(n_t - 1):
        su = zz[None, None, :] * coeffs.U[n][:, :, None]
        sv = su * K[:, :, None]
        adv = su * _upwind_deriv(W[n], grid.dxi, np.broadcast_to(su, W[n].shape), axis=0) \
            + sv * _upwind_deriv(W[n], grid.deta, np.broadcast_to(sv, W[n].shape), axis=1)
        T = W[n] - dt * adv

        A = coeffs.A_slice(n + 1)
        B = coeffs.B_slice(n + 1)
        P = np.maximum(W_prev[n + 1], floor)
        P2 = P * P
        Ap = np.maximum(A, 0.0)
        Am = np.minimum(A, 0.0)
        lo = -dt * Ap / dz - dt * P2 / dz ** 2
        hi = dt * Am / dz - dt * P2 / dz ** 2
        di = 1.0 + dt * (Ap - Am) / dz + dt * B + 2.0 * dt * P2 / dz ** 2
        rhs = T.copy()
        # top: Dirichlet W = 0
        lo[..., -1] = 0.0
        hi[..., -1] = 0.0
        di[..., -1] = 1.0
        rhs[..., -1] = 0.0
        # wall: P0 (-3 W0 + 4 W1 - W2)/(2 dz) = p_x/U, eliminate W2 by row 1
        P0 = np.maximum(wall_weight[n + 1], floor[0])
        g = coeffs.px_over_U[n + 1]
        r0 = -3.0 * P0 / (2.0 * dz)
        r1 = 4.0 * P0 / (2.0 * dz)
        r2 = -P0 / (2.0 * dz)
        c1 = hi[..., 1]
        if np.any(np.abs(c1) < 1e-300):
            raise SingularRow("first interior row has no upper coupling; cannot eliminate")
        f = r2 / c1
        di[..., 0] = r0 - f * lo[..., 1]
        hi[..., 0] = r1 - f * di[..., 1]
        lo[..., 0] = 0.0
        rhs[..., 0] = g - f * rhs[..., 1]

        W[n + 1] = _thomas(lo, di, hi, rhs)
        _pin_inflow(W, traces, slice(n + 1, n + 2))
    return W


# ---------------------------------------------------------------------------
# derivative functionals (diagnostics of the iterate regularity)

def derivative_functionals(W, grid=None, alpha_V=1.0, K0=1.0, K1=1.0,
                           N0=1.0, N1=1.0, return_fields=False, chunk=16):
    """Maxima of the first/second derivative functionals of V = W e^{aV z}.

        Phi = sum_{|g|=1} |dT^g V|^2 + V_z^2 + K0 + K1 zeta
        Psi = sum_{|g|=2} |dT^g V|^2 + sum_{|g|=1} |dT^g V_z|^2
              + V_zz^2 + N0 + N1 zeta

    with dT ranging over the tangential axes (t, xi, eta).  Evaluated in
    time chunks so refined grids do not hold ten full-size derivative
    fields at once.  The weight exponent alpha_V is a free diagnostic
    parameter; the analytic envelope rate is far too large for e^{aV z}
    to stay representable, and any fixed choice gives the same
    uniform-boundedness signal across iterates.
    """
    if hasattr(W, "W") and hasattr(W, "grid"):
        grid = W.grid if grid is None else grid
        W = W.W
    n_t = grid.n_t
    expz = np.exp(alpha_V * grid.zeta)
    phi_max = 0.0
    psi_max = 0.0
    fields = [] if return_fields else None
    halo = 4
    for i0 in range(0, n_t, chunk):
        i1 = min(i0 + chunk, n_t)
        s0 = max(0, i0 - halo)
        s1 = min(n_t, i1 + halo)
        V = W[s0:s1] * expz
        sel = slice(i0 - s0, i1 - s0)
        Vt = diff_axis(V, grid.dt, axis=0, order=1, acc=2)
        Vx = diff_axis(V, grid.dxi, axis=1, order=1, acc=2)
        Ve = diff_axis(V, grid.deta, axis=2, order=1, acc=2)
        Vz = diff_axis(V, grid.dzeta, axis=3, order=1, acc=2)
        phi = (Vt ** 2 + Vx ** 2 + Ve ** 2 + Vz ** 2)[sel] + K0 + K1 * grid.zeta
        Vtt = diff_axis(V, grid.dt, axis=0, order=2, acc=2)
        Vxx = diff_axis(V, grid.dxi, axis=1, order=2, acc=2)
        Vee = diff_axis(V, grid.deta, axis=2, order=2, acc=2)
        Vtx = diff_axis(Vt, grid.dxi, axis=1, order=1, acc=2)
        Vte = diff_axis(Vt, grid.deta, axis=2, order=1, acc=2)
        Vxe = diff_axis(Vx, grid.deta, axis=2, order=1, acc=2)
        Vzt = diff_axis(Vz, grid.dt, axis=0, order=1, acc=2)
        Vzx = diff_axis(Vz, grid.dxi, axis=1, order=1, acc=2)
        Vze = diff_axis(Vz, grid.deta, axis=2, order=1, acc=2)
        Vzz = diff_axis(V, grid.dzeta, axis=3, order=2, acc=2)
        psi = (Vtt ** 2 + Vxx ** 2 + Vee ** 2 + Vtx ** 2 + Vte ** 2 + Vxe ** 2
               + Vzt ** 2 + Vzx ** 2 + Vze ** 2 + Vzz ** 2)[sel] + N0 + N1 * grid.zeta
        phi_max = max(phi_max, float(phi.max()))
        psi_max = max(psi_max, float(psi.max()))
        if return_fields:
            fields.append((phi, psi))
    if return_fields:
        phi_f = np.concatenate([f[0] for f in fields], axis=0)
        psi_f = np.concatenate([f[1] for f in fields], axis=0)
        return phi_max, psi_max, phi_f, psi_f
    return phi_max, psi_max


# ---------------------------------------------------------------------------
# outer iteration

class CroccoField:
    """Converged transformed shear field on its grid."""

    def __init__(self, grid, W, flow):
        self.grid = grid
        self.W = W
        self.flow = flow

    def ratio_bound(self, zeta_cut=None):
        """Smallest M' with (1/M')(1-zeta) <= W <= M'(1-zeta) below the cutoff."""
        from .crocco import ZETA_MAX_DEFAULT
        cut = ZETA_MAX_DEFAULT if zeta_cut is None else zeta_cut
        sel = self.grid.zeta <= cut + 1e-14
        w = self.W[..., sel]
        if np.any(w <= 0.0):
            return np.inf
        r = w / (1.0 - self.grid.zeta[sel])
        return max(float(r.max()), float((1.0 / r).max()))


class SolveReport:
    """Iteration history, certification and constants of one solve."""

    def __init__(self):
        self.iterations = []          # dicts: diff, q, phi_max, psi_max
        self.converged = False
        self.halvings = 0
        self.achieved_t_max = None
        self.envelope = None
        self.certification = None
        self.M_data = None
        self.M_solution = None
        self.compat = None

    @property
    def contractions(self):
        return [it["q"] for it in self.iterations if it["q"] is not None]

    def __str__(self):
        tail = self.iterations[-1]["diff"] if self.iterations else np.nan
        qmax = max(self.contractions) if self.contractions else np.nan
        cert = self.certification or {}
        return (f"solve: converged={self.converged} iters={len(self.iterations)} "
                f"final_diff={tail:.3e} q_max={qmax:.3f} halvings={self.halvings} "
                f"T={self.achieved_t_max:.4g} M_data={self.M_data:.4g} "
                f"M_solution={self.M_solution:.4g} "
                f"envelope_violations={cert.get('violations', 'n/a')}")


def _truncate_traces(traces, grid_new):
    """Restrict a trace set to a shorter time axis (same nodes)."""
    from .crocco import EdgeTraces, TraceSet
    n_keep = grid_new.n_t
    edges = {}
    for name, et in traces.edges.items():
        W1 = [w[:n_keep] for w in et.W1]
        f = [w[:n_keep] for w in et.f]
        edges[name] = EdgeTraces(et.edge, W1, f)
    return TraceSet(grid_new, traces.W0, edges)


def picard_solve(flow, traces, grid, opts=None):
    """Iterate the linearized sweeps to the nonlinear solution.

    Gates on the compatibility check, builds the corner-consistent
    initial guess, and repeats ``linear_step`` with the previous iterate
    frozen into the diffusion coefficient until the weighted sup distance
    between consecutive iterates drops below tolerance.  Three
    consecutive non-contracting steps trigger a halving of the time
    horizon (the contraction constant shrinks with T); the achieved
    horizon is recorded in the report.  Returns (CroccoField, SolveReport).
    """
    o = _merge_opts(opts)
    report = SolveReport()
    coeffs = coefficients(flow, grid)
    compat = check_compatibility(traces, flow, grid, rtol=o["compat_rtol"], coeffs=coeffs)
    report.compat = compat
    if not compat.passed and not o["skip_gate"]:
        raise CompatibilityGateFailed(str(compat))
    M = compat.M
    report.M_data = M

    cur_grid, cur_traces, cur_coeffs = grid, traces, coeffs
    for halving in range(o["max_halvings"] + 1):
        env = envelope(flow, M, cur_grid, cur_coeffs, margin=o["margin"])
        alpha_w = -(env.constants["sup_B"] + 1.0)
        weight = np.exp(alpha_w * cur_grid.t)[:, None, None, None]
        W_old = build_initial_guess(cur_traces, flow, cur_grid, M=M)
        prev_diff = None
        bad_run = 0
        stagnated = False
        report.iterations = []
        for _ in range(o["max_picard"]):
            W_new = linear_step(W_old, cur_traces, cur_coeffs, flow, cur_grid, o)
            diff = float(np.max(np.abs((W_new - W_old) * weight)))
            q = (diff / prev_diff) if (prev_diff is not None and prev_diff > 0) else None
            entry = {"diff": diff, "q": q}
            if o["track_functionals"]:
                pm, sm = derivative_functionals(W_new, cur_grid, alpha_V=1.0)
                entry["phi_max"] = pm
                entry["psi_max"] = sm
            report.iterations.append(entry)
            W_old = W_new
            if diff <= o["tol_sup"]:
                break
            if q is not None and q >= 1.0:
                bad_run += 1
                if bad_run >= 3:
                    stagnated = True
                    break
            else:
                bad_run = 0
            prev_diff = diff
        else:
            stagnated = report.iterations[-1]["diff"] > o["tol_sup"]
        if not stagnated and report.iterations and report.iterations[-1]["diff"] <= o["tol_sup"]:
            report.converged = True
            break
        if halving == o["max_halvings"]:
            raise NoConvergence(
                f"iteration failed to contract after {report.halvings} horizon halvings "
                f"(last diff {report.iterations[-1]['diff']:.3e})")
        new_grid = cur_grid.truncated(cur_grid.t_max / 2.0)
        if new_grid.n_t < 3:
            raise NoConvergence("horizon too short to halve further")
        report.halvings += 1
        cur_traces = _truncate_traces(cur_traces, new_grid)
        cur_grid = new_grid
        cur_coeffs = coefficients(flow, cur_grid)

    report.achieved_t_max = cur_grid.t_max
    report.envelope = env.constants
    report.certification = env.certify(W_old)
    field = CroccoField(cur_grid, W_old, flow)
    report.M_solution = field.ratio_bound()
    return field, report
