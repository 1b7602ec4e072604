"""Lyapunov exponents and stability diagnostics for quasi-periodically driven
differential equations with state-dependent delay."""

from .driving import Phase, TorusFlow, advance, phase_distance
from .errors import (BlowUpError, CompatibilityError, ConfigError, ConvergenceError,
                     DomainError, ExprSyntaxError, InsufficientDataError, MalformedInputError,
                     ModelViolation, NumericalFailure, ProvenanceError, SddeError)
from .segment import PiecewiseHermite, Segment, combine, shift_extract
from .sdde import (SddeModel, StepControl, Trajectory, check_compatibility, integrate,
                   model_from_dsl, omega_limit_sample, semiflow_map)
from .variational import (FrozenL, build_L, direction_ensemble, directional_derivative_check,
                          inequality_checks, integrate_variational, remainder_g)
from .lyapunov import (ExponentReport, characteristic_root_oracle, estimate_exponent,
                       exponent_norm_equality_check)
from .analysis import (almost_periodicity_diagnostic, basin_probe, cover_detect,
                       smallness_profile, stability_probe)
from .models import get_preset, preset_names

__version__ = "0.1.0"
