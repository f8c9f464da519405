"""Rectangular domains, aligned direction fields and outer Euler data.

The structural ansatz ties the crossflow to the streamwise velocity,
v = k(x, y) u, so the whole outer problem is described by the rectangle,
the direction coefficient k and the outer pair (U, p).  This module
builds those objects, classifies the lateral boundary by the sign of the
advection normal speed (1, k) . n, and checks the hypotheses the solver
relies on: Bernoulli balance, pressure alignment, and the inviscid
Burgers equation for k.
"""

import inspect

import numpy as np
from scipy.optimize import brentq

from .errors import (CharacteristicCrossing, EmptyDomain, NonPositiveU,
                     RootFindFailure)
from .grids import diff_axis

# below this the normal speed counts as characteristic
CHAR_TOL = 1e-12


class RectDomain:
    """Axis-aligned rectangle [x0, x1] x [y0, y1]."""

    def __init__(self, x_range, y_range):
        x0, x1 = float(x_range[0]), float(x_range[1])
        y0, y1 = float(y_range[0]), float(y_range[1])
        if not (x1 > x0) or not (y1 > y0):
            raise EmptyDomain(f"degenerate rectangle x={x_range}, y={y_range}")
        self.x_range = (x0, x1)
        self.y_range = (y0, y1)

    def __repr__(self):
        return f"RectDomain(x={self.x_range}, y={self.y_range})"


class DirectionField:
    """Direction coefficient k(x, y) of the aligned crossflow v = k u."""

    def __init__(self, func, description="custom"):
        self.func = func
        self.description = description

    @classmethod
    def constant(cls, value):
        c = float(value)
        return cls(lambda x, y: np.broadcast_to(c, np.broadcast(x, y).shape).copy(),
                   f"constant {c}")

    def sample(self, xi, eta):
        """Samples on the tensor grid xi x eta, shape (n_xi, n_eta)."""
        xi = np.atleast_1d(np.asarray(xi, dtype=float))
        eta = np.atleast_1d(np.asarray(eta, dtype=float))
        vals = np.asarray(self.func(xi[:, None], eta[None, :]), dtype=float)
        return np.broadcast_to(vals, (xi.size, eta.size)).copy()

    def __call__(self, x, y):
        return self.func(x, y)


class EulerData:
    """Outer tangential speed U(t, x, y) > 0 and pressure p(t, x, y)."""

    def __init__(self, U, p, description="custom"):
        self.U_func = U
        self.p_func = p
        self.description = description

    def sample_U(self, t, xi, eta):
        t = np.atleast_1d(np.asarray(t, dtype=float))
        xi = np.atleast_1d(np.asarray(xi, dtype=float))
        eta = np.atleast_1d(np.asarray(eta, dtype=float))
        vals = np.asarray(self.U_func(t[:, None, None], xi[None, :, None],
                                      eta[None, None, :]), dtype=float)
        return np.broadcast_to(vals, (t.size, xi.size, eta.size)).copy()

    def sample_p(self, t, xi, eta):
        t = np.atleast_1d(np.asarray(t, dtype=float))
        xi = np.atleast_1d(np.asarray(xi, dtype=float))
        eta = np.atleast_1d(np.asarray(eta, dtype=float))
        vals = np.asarray(self.p_func(t[:, None, None], xi[None, :, None],
                                      eta[None, None, :]), dtype=float)
        return np.broadcast_to(vals, (t.size, xi.size, eta.size)).copy()


class EdgeInfo:
    """One lateral edge with its advection decomposition.

    Nodes are stored in ascending coordinate order; ``tau_sign`` converts
    derivatives along the stored axis into derivatives along the
    counterclockwise tangent.
    """

    def __init__(self, name, axis, side, coord, nodes, normal, tau, tau_sign,
                 k_edge, owns_corner_index):
        self.name = name
        self.axis = axis              # "xi" if the edge varies in xi
        self.side = side              # 0 = low coordinate, 1 = high
        self.coord = coord            # the frozen coordinate value
        self.nodes = nodes
        self.normal = normal
        self.tau = tau
        self.tau_sign = tau_sign
        self.k_edge = k_edge
        self.k_n = normal[0] + k_edge * normal[1]
        self.k_tau = tau[0] + k_edge * tau[1]
        self.owns_corner_index = owns_corner_index
        kind = np.where(self.k_n < -CHAR_TOL, "inflow",
                        np.where(self.k_n > CHAR_TOL, "outflow", "characteristic"))
        self.kind = kind
        self.segments = _segments(nodes, kind)

    @property
    def is_inflow(self):
        return bool(np.all(self.kind == "inflow"))

    @property
    def has_inflow(self):
        return bool(np.any(self.kind == "inflow"))

    def __repr__(self):
        segs = ", ".join(f"{k}[{a:.3g},{b:.3g}]" for k, a, b, _, _ in self.segments)
        return f"EdgeInfo({self.name}: {segs})"


def _segments(nodes, kind):
    """Contiguous runs of one kind: (kind, c_start, c_end, i_start, i_end)."""
    segs = []
    start = 0
    for i in range(1, len(kind) + 1):
        if i == len(kind) or kind[i] != kind[start]:
            segs.append((str(kind[start]), float(nodes[start]), float(nodes[i - 1]),
                         start, i - 1))
            start = i
    return segs


class BoundaryClassification:
    """The four lateral edges classified by sign of (1, k) . n."""

    ORDER = ("bottom", "right", "top", "left")

    def __init__(self, edges):
        self.edges = edges

    def inflow_edges(self):
        return [self.edges[n] for n in self.ORDER if self.edges[n].has_inflow]

    def __repr__(self):
        return "BoundaryClassification(\n  " + "\n  ".join(
            repr(self.edges[n]) for n in self.ORDER) + "\n)"


def classify_boundary(k_field, domain, xi, eta):
    """Classify all four edges on the given axis nodes."""
    x0, x1 = domain.x_range
    y0, y1 = domain.y_range
    xi = np.asarray(xi, dtype=float)
    eta = np.asarray(eta, dtype=float)
    k_bottom = k_field.sample(xi, np.array([y0]))[:, 0]
    k_top = k_field.sample(xi, np.array([y1]))[:, 0]
    k_left = k_field.sample(np.array([x0]), eta)[0, :]
    k_right = k_field.sample(np.array([x1]), eta)[0, :]
    edges = {
        "bottom": EdgeInfo("bottom", "xi", 0, y0, xi, (0.0, -1.0), (1.0, 0.0), +1,
                           k_bottom, len(xi) - 1),
        "right": EdgeInfo("right", "eta", 1, x1, eta, (1.0, 0.0), (0.0, 1.0), +1,
                          k_right, len(eta) - 1),
        "top": EdgeInfo("top", "xi", 1, y1, xi, (0.0, 1.0), (-1.0, 0.0), -1,
                        k_top, 0),
        "left": EdgeInfo("left", "eta", 0, x0, eta, (-1.0, 0.0), (0.0, -1.0), -1,
                         k_left, 0),
    }
    return BoundaryClassification(edges)


class FlowStructure:
    """Domain, direction field and (optionally) outer Euler data."""

    def __init__(self, domain, k, euler=None, probe=129):
        self.domain = domain
        self.k = k
        self.euler = euler
        xi = np.linspace(domain.x_range[0], domain.x_range[1], probe)
        eta = np.linspace(domain.y_range[0], domain.y_range[1], probe)
        self.default_boundary = classify_boundary(k, domain, xi, eta)

    def boundary(self, grid):
        return classify_boundary(self.k, self.domain, grid.xi, grid.eta)

    def with_euler(self, U, p, description="custom"):
        return FlowStructure(self.domain, self.k, EulerData(U, p, description))


def make_rect_domain(x_range, y_range, k_spec, x0=None):
    """Build a FlowStructure skeleton: domain, direction field, boundary.

    ``k_spec`` may be a constant, a DirectionField, a one-argument callable
    (an inflow profile g, resolved through the characteristic relation), or
    a two-argument callable giving k(x, y) directly.
    """
    domain = RectDomain(x_range, y_range)
    if isinstance(k_spec, DirectionField):
        k = k_spec
    elif np.isscalar(k_spec):
        k = DirectionField.constant(k_spec)
    elif callable(k_spec):
        nargs = len(inspect.signature(k_spec).parameters)
        if nargs == 1:
            xi = np.linspace(domain.x_range[0], domain.x_range[1], 129)
            eta = np.linspace(domain.y_range[0], domain.y_range[1], 129)
            k = k_from_inflow(k_spec, xi, eta, x0=x0)
        else:
            k = DirectionField(k_spec, "callable")
    else:
        raise TypeError(f"unsupported k_spec {type(k_spec)}")
    return FlowStructure(domain, k)


def k_from_inflow(g, xi, eta, x0=None, xtol=1e-13):
    """Direction field from an inflow profile: k = g(eta - k (xi - x0)).

    Each node is solved by bracketed root finding on
    F(k) = k - g(eta - k (xi - x0)); the Jacobian of the characteristic
    map, 1 + (xi - x0) g', must stay positive at the root or the field is
    multivalued and CharacteristicCrossing is raised.  The returned field
    solves the relation afresh at every evaluation point, so it is exact
    on any grid, not just the probe nodes.
    """
    xi = np.asarray(xi, dtype=float)
    eta = np.asarray(eta, dtype=float)
    x_origin = float(xi[0]) if x0 is None else float(x0)

    def solve_one(x, y):
        dx = x - x_origin
        if abs(dx) < 1e-300:
            return float(g(y))

        def F(kk):
            return kk - g(y - kk * dx)

        lo = hi = float(g(y))
        flo = fhi = F(lo)
        step = max(1.0, abs(lo))
        tries = 0
        while flo > 0.0 and tries < 60:
            lo -= step
            step *= 2.0
            flo = F(lo)
            tries += 1
        step = max(1.0, abs(hi))
        while fhi < 0.0 and tries < 120:
            hi += step
            step *= 2.0
            fhi = F(hi)
            tries += 1
        if flo > 0.0 or fhi < 0.0:
            raise RootFindFailure(f"no bracket for direction field at ({x:.4g}, {y:.4g})")
        if flo == 0.0:
            root = lo
        elif fhi == 0.0:
            root = hi
        else:
            root = brentq(F, lo, hi, xtol=xtol, maxiter=200)
        arg = y - root * dx
        h = 1e-7 * max(1.0, abs(arg))
        gp = (g(arg + h) - g(arg - h)) / (2.0 * h)
        jac = 1.0 + dx * gp
        if jac <= 1e-10:
            raise CharacteristicCrossing(
                f"inflow characteristics cross near x={x:.4g} (jacobian {jac:.3e})")
        return float(root)

    def func(X, Y):
        Xb, Yb = np.broadcast_arrays(np.asarray(X, dtype=float), np.asarray(Y, dtype=float))
        out = np.empty(Xb.shape, dtype=float)
        for idx in np.ndindex(Xb.shape):
            out[idx] = solve_one(Xb[idx], Yb[idx])
        return out

    fld = DirectionField(func, "inflow-profile")
    fld.sample(xi, eta)     # forces the crossing check over the probe grid
    return fld


def burgers_residual(k, grid):
    """Residual of the steady inviscid Burgers equation k_x + k k_y.

    Second-order central differences inside, one-sided at the edges.
    Returns the residual field on (xi, eta) and its max magnitude.
    """
    if isinstance(k, DirectionField):
        K = k.sample(grid.xi, grid.eta)
    else:
        K = np.asarray(k, dtype=float)
        if K.shape != (grid.n_xi, grid.n_eta):
            raise ValueError(f"k samples {K.shape} do not match grid {(grid.n_xi, grid.n_eta)}")
    kx = diff_axis(K, grid.dxi, axis=0, order=1, acc=2)
    ky = diff_axis(K, grid.deta, axis=1, order=1, acc=2)
    res = kx + K * ky
    return res, float(np.max(np.abs(res)))


class ValidationReport:
    """Outcome of the outer-data hypothesis checks."""

    def __init__(self, bernoulli_max, alignment_max, burgers_max, u_min, tol):
        self.bernoulli_max = bernoulli_max
        self.alignment_max = alignment_max
        self.burgers_max = burgers_max
        self.u_min = u_min
        self.tol = tol
        self.failures = []
        if bernoulli_max > tol:
            self.failures.append("bernoulli")
        if alignment_max > tol:
            self.failures.append("alignment")
        if burgers_max > tol:
            self.failures.append("direction-burgers")
        self.passed = not self.failures

    def __str__(self):
        verdict = "pass" if self.passed else "FAIL(" + ",".join(self.failures) + ")"
        return (f"euler-validate {verdict}: bernoulli={self.bernoulli_max:.3e} "
                f"alignment={self.alignment_max:.3e} burgers={self.burgers_max:.3e} "
                f"U_min={self.u_min:.3e} tol={self.tol:.1e}")


def validate_euler(flow, grid, tol=1e-4):
    """Check the outer data hypotheses on the grid.

    Residuals (second-order sampling-based):
      bernoulli        U_t + U U_x + k U U_y + p_x
      alignment        p_y - k p_x
      direction        k_x + k k_y
    Raises NonPositiveU when U is not strictly positive; the other checks
    are reported with their max magnitudes against ``tol``.
    """
    if flow.euler is None:
        raise NonPositiveU("flow has no Euler data attached")
    U = flow.euler.sample_U(grid.t, grid.xi, grid.eta)
    p = flow.euler.sample_p(grid.t, grid.xi, grid.eta)
    u_min = float(U.min())
    if u_min <= 0.0:
        raise NonPositiveU(f"outer speed must be positive, min U = {u_min:.3e}")
    K = flow.k.sample(grid.xi, grid.eta)[None, :, :]
    U_t = diff_axis(U, grid.dt, axis=0, order=1, acc=2)
    U_x = diff_axis(U, grid.dxi, axis=1, order=1, acc=2)
    U_y = diff_axis(U, grid.deta, axis=2, order=1, acc=2)
    p_x = diff_axis(p, grid.dxi, axis=1, order=1, acc=2)
    p_y = diff_axis(p, grid.deta, axis=2, order=1, acc=2)
    bern = U_t + U * U_x + K * U * U_y + p_x
    align = p_y - K * p_x
    _, burg = burgers_residual(flow.k, grid)
    return ValidationReport(float(np.max(np.abs(bern))),
                            float(np.max(np.abs(align))),
                            burg, u_min, tol)
