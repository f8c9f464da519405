"""Error types raised by the solver and verification suite.

Everything derives from PrandtlError so callers (and the CLI) can map the
whole family to a single "validation or numerics failed" outcome while
still catching specific conditions.
"""


class PrandtlError(Exception):
    """Base class for all package errors."""


# ---- domain / direction field -------------------------------------------

class EmptyDomain(PrandtlError):
    """Rectangle with non-positive extent in x or y."""


class MissingSamples(PrandtlError):
    """A sampled field does not cover the requested grid."""


class GridTooCoarse(PrandtlError):
    """Grid counts below the minimum the discretizations need."""


class CharacteristicCrossing(PrandtlError):
    """Characteristics emanating from the inflow boundary cross inside
    the domain, so no single-valued direction field exists."""


class RootFindFailure(PrandtlError):
    """Bracketed root solve for the direction field failed to converge."""


# ---- transform ------------------------------------------------------------

class NonMonotone(PrandtlError):
    """Velocity profile is not strictly increasing in z."""


class BadLimit(PrandtlError):
    """Velocity profile does not approach the outer speed in range."""


class NonPositiveW(PrandtlError):
    """Transformed shear must be positive below the cutoff."""


class CutoffTooLarge(PrandtlError):
    """Inverse-transform cutoff maps beyond the physical z grid."""


class NonPositiveU(PrandtlError):
    """Outer tangential speed must be strictly positive."""


# ---- traces / compatibility ------------------------------------------------

class IncompatibleInflowData(PrandtlError):
    """Inflow data admit no bounded normal-derivative trace."""


class CharacteristicEdge(PrandtlError):
    """Trace recursion requested on an edge node where the advection
    normal speed vanishes."""


class MissingTraces(PrandtlError):
    """Operation requires trace data that was not supplied."""


class CompatibilityGateFailed(PrandtlError):
    """Data failed the compatibility check that gates the solver."""


# ---- solver -----------------------------------------------------------------

class InfeasibleConstants(PrandtlError):
    """No admissible envelope constants for the given data bounds."""


class CFLViolation(PrandtlError):
    """Time step exceeds the explicit transport stability bound."""


class SingularRow(PrandtlError):
    """Tridiagonal elimination hit a vanishing pivot or wall weight."""


class NoConvergence(PrandtlError):
    """Iteration failed to contract even after horizon reduction."""


# ---- reconstruction ----------------------------------------------------------

class VanishingShear(PrandtlError):
    """Shear too small to divide by during reconstruction."""


# ---- stability ----------------------------------------------------------------

class BudgetExceedsStencil(PrandtlError):
    """Requested derivative budget cannot be resolved on the grid."""


class MissingBackground(PrandtlError):
    """Stability solve invoked without a complete background state."""


# ---- io / config ----------------------------------------------------------------

class ConfigParse(PrandtlError):
    """Run configuration file is malformed."""
