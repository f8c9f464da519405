"""Batch solver and verification suite for the aligned-crossflow
three-dimensional boundary layer.

The crossflow ansatz v = k(x, y) u reduces the three-dimensional
boundary-layer system to a scalar degenerate parabolic problem for the
normalized shear W = u_z / U in Crocco variables.  The package solves
that problem by a certified fixed-point iteration, reconstructs the
physical velocities, audits every structural identity the ansatz
implies, and runs the linearized perturbation pipeline around a solved
background.
"""

from .errors import (BadLimit, BudgetExceedsStencil, CFLViolation,
                     CharacteristicCrossing, CharacteristicEdge,
                     CompatibilityGateFailed, ConfigParse, CutoffTooLarge,
                     EmptyDomain, GridTooCoarse, IncompatibleInflowData,
                     InfeasibleConstants, MissingBackground, MissingSamples,
                     MissingTraces, NoConvergence, NonMonotone, NonPositiveU,
                     NonPositiveW, PrandtlError, RootFindFailure, SingularRow,
                     VanishingShear)
from .grids import (GridSpec, cheb_diff, cumtrapz0, diff_axis,
                    diff_nonuniform, geometric_grid)
from .flowfield import (DirectionField, EulerData, FlowStructure, RectDomain,
                        ValidationReport, burgers_residual, classify_boundary,
                        k_from_inflow, make_rect_domain, validate_euler)
from .crocco import (CompatReport, CroccoCoefficients, TraceSet, build_traces,
                     check_compatibility, coefficients, crocco_forward,
                     crocco_inverse, inflow_traces, initial_time_traces)
from .solver import (DEFAULT_OPTS, CroccoField, Envelope, SolveReport,
                     build_initial_guess, cfl_bound, derivative_functionals,
                     envelope, linear_step, picard_solve)
from .heat_reference import HeatReference, heat_reference
from .reconstruct import (PrandtlState, ResidualReport, default_z_grid,
                          divergence_identity, momentum_cross_defect,
                          normal_velocity, prandtl_residual, reconstruct_state,
                          structure_defect, tangential_velocity)
from .stability import (Background, PerturbationData, StabilityGrid,
                        StabilityReport, assemble_perturbation, data_norms,
                        run_perturbation, solve_h, solve_tilde_v,
                        stability_report, weighted_norm)
from .presets import PRESET_NAMES, Preset, make_preset, reduced_profile_solve
from .config import Config, load_config, parse_config
from . import gridio

__version__ = "0.1.0"

__all__ = [name for name in dir() if not name.startswith("_")]
