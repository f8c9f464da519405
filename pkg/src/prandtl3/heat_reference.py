"""Independent physical-space reference for shear flows.

For (x, y)-independent data, a constant direction field and zero pressure
gradient, the normal velocity vanishes and the tangential velocity solves
the one-dimensional heat equation

    u_t = u_zz,   u(t, 0) = 0,   u(0, z) = u0(z),

on a half line.  This module integrates that problem directly in the
physical variables (Crank-Nicolson on a uniform z grid, far-field value
frozen at the initial datum, which is accurate to the heat-kernel tail
for z_max well outside the layer).  It shares no code path with the
transformed solver, so agreement between the two is a genuine
end-to-end check of the transform/solve/reconstruct chain.
"""

import numpy as np
from scipy.linalg import solve_banded


class HeatReference:
    """Reference solution samples u(t_i, z_j) with interpolation access."""

    def __init__(self, t, z, u):
        self.t = t
        self.z = z
        self.u = u

    def sample(self, z_query, t_index=None):
        """Interpolate onto arbitrary z samples (all levels or one)."""
        zq = np.asarray(z_query, dtype=float)
        if t_index is not None:
            return np.interp(zq, self.z, self.u[t_index])
        out = np.empty((self.u.shape[0],) + zq.shape)
        for i in range(self.u.shape[0]):
            out[i] = np.interp(zq, self.z, self.u[i])
        return out


def heat_reference(u0, t_max, z_max=12.0, n_z=2049, n_t=1025):
    """Crank-Nicolson integration of the wall heat problem.

    Parameters
    ----------
    u0 : callable
        Initial profile u0(z); u0(0) must be 0.
    t_max, z_max : float
        Horizon and domain height.  The top value is held at u0(z_max);
        for profiles converging to their limit well inside z_max the
        committed error is of the order of the heat-kernel tail.
    n_z, n_t : int
        Uniform grid sizes (second order in both steps).
    """
    z = np.linspace(0.0, z_max, n_z)
    t = np.linspace(0.0, t_max, n_t)
    dz = z[1] - z[0]
    dt = t[1] - t[0]
    u = np.empty((n_t, n_z))
    u[0] = u0(z)
    if abs(u[0, 0]) > 1e-14:
        raise ValueError("initial profile must vanish at the wall")
    r = dt / (2.0 * dz * dz)

    # banded LHS: identity rows at both ends, CN rows inside
    ab = np.zeros((3, n_z))
    ab[0, 2:] = -r
    ab[1, :] = 1.0 + 2.0 * r
    ab[2, :-2] = -r
    ab[1, 0] = 1.0
    ab[0, 1] = 0.0
    ab[1, -1] = 1.0
    ab[2, -2] = 0.0

    rhs = np.empty(n_z)
    for n in range(n_t - 1):
        un = u[n]
        rhs[1:-1] = un[1:-1] + r * (un[2:] - 2.0 * un[1:-1] + un[:-2])
        rhs[0] = 0.0
        rhs[-1] = u[0, -1]
        u[n + 1] = solve_banded((1, 1), ab, rhs)
    return HeatReference(t, z, u)
