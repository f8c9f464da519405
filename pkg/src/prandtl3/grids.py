"""Grid containers and the discrete calculus used throughout the package.

Two differentiation helpers coexist on purpose.  ``diff_axis`` applies
local finite-difference stencils (centered inside, one-sided at the ends)
and is what the pointwise validators and residual evaluators use.  The
trace recursions instead need ``cheb_diff``: repeated application of local
stencils plants small endpoint errors that the quadratic recursions
amplify by 1/h^2 per level, so there every derivative comes from a single
global Chebyshev fit of the (smooth) sampled data.
"""

import numpy as np
from numpy.polynomial import chebyshev as _cheb
from scipy.integrate import cumulative_trapezoid

from .errors import GridTooCoarse


def fornberg_weights(x0, x, m):
    """Weights of finite-difference stencils on arbitrary nodes.

    Parameters
    ----------
    x0 : float
        Point where the derivatives are approximated.
    x : array
        Stencil nodes, distinct.
    m : int
        Highest derivative order.

    Returns
    -------
    w : ndarray, shape (m+1, len(x))
        ``w[k] @ f(x)`` approximates ``f^(k)(x0)``.
    """
    x = np.asarray(x, dtype=float)
    n = x.size
    if n < m + 1:
        raise GridTooCoarse(f"need at least {m + 1} nodes for derivative order {m}, got {n}")
    w = np.zeros((m + 1, n))
    c1 = 1.0
    c4 = x[0] - x0
    w[0, 0] = 1.0
    for i in range(1, n):
        mn = min(i, m)
        c2 = 1.0
        c5 = c4
        c4 = x[i] - x0
        for j in range(i):
            c3 = x[i] - x[j]
            c2 = c2 * c3
            if j == i - 1:
                for k in range(mn, 0, -1):
                    w[k, i] = c1 * (k * w[k - 1, i - 1] - c5 * w[k, i - 1]) / c2
                w[0, i] = -c1 * c5 * w[0, i - 1] / c2
            for k in range(mn, 0, -1):
                w[k, j] = ((x[i] - x0) * w[k, j] - k * w[k - 1, j]) / c3
            w[0, j] = (x[i] - x0) * w[0, j] / c3
        c1 = c2
    return w


def diff_axis(f, h, axis=-1, order=1, acc=2):
    """Differentiate uniformly sampled data along one axis.

    Centered stencils of ``order + acc`` points in the interior, one-sided
    stencils of the same width at the ends, so the result is O(h^acc)
    everywhere for smooth data.
    """
    f = np.asarray(f, dtype=float)
    f = np.moveaxis(f, axis, -1)
    n = f.shape[-1]
    npts = order + acc
    if npts > n:
        npts = n
    if n < order + 1:
        raise GridTooCoarse(f"axis has {n} nodes, cannot take derivative order {order}")
    idx = np.arange(npts, dtype=float)
    out = np.empty_like(f)
    half = (npts - 1) // 2
    for i in range(n):
        start = min(max(i - half, 0), n - npts)
        wloc = fornberg_weights(i - start, idx, order)[order] / h ** order
        out[..., i] = f[..., start:start + npts] @ wloc
    return np.moveaxis(out, -1, axis)


def diff_nonuniform(f, x, axis=-1, order=1, npts=5):
    """Differentiate data sampled on a non-uniform axis.

    Sliding Fornberg stencils of ``npts`` nodes; one-sided at the ends.
    """
    f = np.asarray(f, dtype=float)
    x = np.asarray(x, dtype=float)
    f = np.moveaxis(f, axis, -1)
    n = f.shape[-1]
    npts = min(npts, n)
    if npts < order + 1:
        raise GridTooCoarse(f"need {order + 1} stencil nodes for order {order}, have {npts}")
    out = np.empty_like(f)
    half = (npts - 1) // 2
    for i in range(n):
        start = min(max(i - half, 0), n - npts)
        wloc = fornberg_weights(x[i], x[start:start + npts], order)[order]
        out[..., i] = f[..., start:start + npts] @ wloc
    return np.moveaxis(out, -1, axis)


def cheb_diff(f, x, axis=-1, order=1, max_degree=48):
    """Differentiate smooth sampled data through one global Chebyshev fit.

    The fit degree is min(n-1, max_degree); for n-1 <= max_degree this is
    polynomial interpolation, exact (to conditioning) when the data is a
    polynomial of that degree.  Used inside the trace recursions where the
    endpoint error spikes of local stencils would compound level by level.
    """
    f = np.asarray(f, dtype=float)
    x = np.asarray(x, dtype=float)
    f = np.moveaxis(f, axis, -1)
    lead = f.shape[:-1]
    n = f.shape[-1]
    if n < 2:
        raise GridTooCoarse("cannot differentiate a single sample")
    a, b = x[0], x[-1]
    xm = (2.0 * x - (a + b)) / (b - a)
    # keep the fit oversampled by ~2x: least squares at degree ~n on
    # equispaced nodes is the ill-conditioned interpolation limit, and
    # high-order derivatives amplify the coefficient noise by ~deg^(2*order)
    deg = min(n - 1, max_degree, max(8, n // 2))
    coef = _cheb.chebfit(xm, f.reshape(-1, n).T, deg)
    # Trailing coefficients at the least-squares conditioning floor (~1e-14
    # relative) are noise, and chebder amplifies a degree-d row by ~d^(2*order)
    # at the interval ends.  Dropping them makes the derivative of polynomial
    # data exact instead of seeding noise that trace recursions compound.
    row = np.max(np.abs(coef), axis=1)
    scale = row.max()
    if scale > 0.0:
        nz = np.nonzero(row > 5e-13 * scale)[0]
        coef = coef[: nz[-1] + 1]
    coef = _cheb.chebder(coef, order, scl=2.0 / (b - a))
    vals = _cheb.chebval(xm, coef)          # shape (K, n)
    out = vals.reshape(lead + (n,))
    return np.moveaxis(out, -1, axis)


def cumtrapz0(f, x=None, dx=1.0, axis=-1):
    """Cumulative trapezoid starting from zero at the first node."""
    return cumulative_trapezoid(f, x=x, dx=dx, axis=axis, initial=0.0)


def poly_jets(f, x, m_max, axis=-1, win=None, deg=None, return_gains=False):
    """Derivatives 0..m_max at x[0] from a local least-squares fit.

    Fits a single polynomial over the first ~8 + 4*m_max nodes.  Pointwise
    stencils amplify mesh-level noise by h**-m, which for m >= 3 exceeds any
    useful tolerance; a layer-wide fit keeps the amplification at
    (window)**-m instead and gives all orders from one solve.  For data
    whose derivatives grow fast (short analyticity scale) pass a narrower
    ``win`` and higher ``deg``: the default bias suits unit-scale fields.

    With ``return_gains`` also returns, per jet order, the l2 norm of the
    linear functional mapping window samples to the jet: the factor by
    which uncorrelated representation noise in the data is amplified.
    Consumers turn that into certification floors on anything compared
    against extracted jets.
    """
    f = np.asarray(f, dtype=float)
    x = np.asarray(x, dtype=float)
    f = np.moveaxis(f, axis, 0)
    n = f.shape[0]
    if win is None:
        win = 8 + 4 * m_max
    win = min(n, win)
    if deg is None:
        deg = m_max + 3
    deg = min(deg, win - 1)
    if deg < m_max:
        raise GridTooCoarse(f"jet order {m_max} needs {m_max + 1} nodes, have {win}")
    # Chebyshev basis on the window, trailing rows below the conditioning
    # floor dropped: a raw-power fit leaves ~1e-9 relative junk that the
    # (1/window)^m jet scaling then amplifies past tolerance even on data
    # the fit represents exactly
    span = x[win - 1] - x[0]
    s = (2.0 * (x[:win] - x[0]) - span) / span
    coef = _cheb.chebfit(s, f[:win].reshape(win, -1), deg)
    row = np.max(np.abs(coef), axis=1)
    scale = row.max()
    if scale > 0.0:
        nz = np.nonzero(row > 5e-13 * scale)[0]
        coef = coef[: nz[-1] + 1]
    jets = []
    for m in range(m_max + 1):
        if m > 0:
            coef = _cheb.chebder(coef, 1, scl=2.0 / span)
        if coef.shape[0] == 0:
            jets.append(np.zeros(f.shape[1:]))
            continue
        jets.append(np.asarray(_cheb.chebval(-1.0, coef)).reshape(f.shape[1:]))
    if not return_gains:
        return jets
    # noise gain of each jet functional: push the identity through the same
    # fit (untruncated: the floor must not depend on the data) and take the
    # l2 norm of the sample weights
    G = _cheb.chebfit(s, np.eye(win), deg)
    gains = []
    for m in range(m_max + 1):
        if m > 0:
            G = _cheb.chebder(G, 1, scl=2.0 / span)
        w = np.asarray(_cheb.chebval(-1.0, G))
        gains.append(float(np.linalg.norm(w)))
    return jets, gains


def geometric_grid(n, z_max, ratio=1.05):
    """Stretched grid on [0, z_max] whose spacings grow by ``ratio``."""
    if n < 2:
        raise GridTooCoarse("geometric grid needs at least 2 nodes")
    if abs(ratio - 1.0) < 1e-14:
        return np.linspace(0.0, z_max, n)
    h0 = z_max * (ratio - 1.0) / (ratio ** (n - 1) - 1.0)
    steps = h0 * ratio ** np.arange(n - 1)
    return np.concatenate(([0.0], np.cumsum(steps)))


class GridSpec:
    """Uniform tensor grid of the transformed problem.

    Axes: t in [0, t_max], xi and eta spanning the rectangle, zeta in
    [0, 1].  Spacings are derived; zeta is always the full unit interval.
    """

    MIN_ZETA = 8

    def __init__(self, x_range, y_range, n_t, n_xi, n_eta, n_zeta, t_max):
        for name, cnt, lo in [("n_t", n_t, 2), ("n_xi", n_xi, 4),
                              ("n_eta", n_eta, 4), ("n_zeta", n_zeta, self.MIN_ZETA)]:
            if int(cnt) != cnt or cnt < lo:
                raise GridTooCoarse(f"{name}={cnt} below minimum {lo}")
        if not (t_max > 0):
            raise GridTooCoarse(f"t_max={t_max} must be positive")
        x0, x1 = float(x_range[0]), float(x_range[1])
        y0, y1 = float(y_range[0]), float(y_range[1])
        if not (x1 > x0 and y1 > y0):
            raise GridTooCoarse("empty rectangle")
        self.x_range = (x0, x1)
        self.y_range = (y0, y1)
        self.n_t, self.n_xi, self.n_eta, self.n_zeta = int(n_t), int(n_xi), int(n_eta), int(n_zeta)
        self.t_max = float(t_max)
        self.t = np.linspace(0.0, self.t_max, self.n_t)
        self.xi = np.linspace(x0, x1, self.n_xi)
        self.eta = np.linspace(y0, y1, self.n_eta)
        self.zeta = np.linspace(0.0, 1.0, self.n_zeta)

    @classmethod
    def for_domain(cls, domain, n_t, n_xi, n_eta, n_zeta, t_max):
        return cls(domain.x_range, domain.y_range, n_t, n_xi, n_eta, n_zeta, t_max)

    @property
    def dt(self):
        return self.t[1] - self.t[0]

    @property
    def dxi(self):
        return self.xi[1] - self.xi[0]

    @property
    def deta(self):
        return self.eta[1] - self.eta[0]

    @property
    def dzeta(self):
        return self.zeta[1] - self.zeta[0]

    def shape(self):
        return (self.n_t, self.n_xi, self.n_eta, self.n_zeta)

    def truncated(self, t_max_new):
        """Same spatial grid, time axis cut at the largest node <= t_max_new."""
        n_keep = int(np.searchsorted(self.t, t_max_new + 1e-12 * self.t_max, side="right"))
        n_keep = max(n_keep, 2)
        return GridSpec(self.x_range, self.y_range, n_keep, self.n_xi,
                        self.n_eta, self.n_zeta, self.t[n_keep - 1])

    def refined(self, factor):
        """All four axes refined: counts scale as (n-1)*factor + 1."""
        return GridSpec(self.x_range, self.y_range,
                        (self.n_t - 1) * factor + 1, (self.n_xi - 1) * factor + 1,
                        (self.n_eta - 1) * factor + 1, (self.n_zeta - 1) * factor + 1,
                        self.t_max)

    def __repr__(self):
        return (f"GridSpec(x={self.x_range}, y={self.y_range}, "
                f"n=({self.n_t},{self.n_xi},{self.n_eta},{self.n_zeta}), t_max={self.t_max})")
