"""Exception hierarchy shared by all modules."""


class SddeError(Exception):
    """Base class for errors raised by this package."""


class MalformedInputError(SddeError, ValueError):
    """Inputs with incompatible shapes, meshes or dimensions."""


class DomainError(SddeError, ValueError):
    """Evaluation point outside the segment interval [-r, 0]."""


class ModelViolation(SddeError):
    """The model broke one of its own hypotheses (e.g. a delay outside [0, r])."""


class NumericalFailure(SddeError):
    """Integration could not proceed (non-convergence, blow-up)."""


class BlowUpError(NumericalFailure):
    """The solution left the blow-up bound before the requested time."""

    def __init__(self, msg, t_blowup=None):
        super().__init__(msg)
        self.t_blowup = t_blowup


class ConvergenceError(NumericalFailure):
    """Fixed-point iteration for an overlapping delay did not converge."""


class CompatibilityError(SddeError):
    """Linearization requested at a point outside the compatibility set."""


class ProvenanceError(SddeError):
    """Two reports that must share base points and seed do not."""


class ConfigError(SddeError):
    """Invalid scenario configuration; ``key`` names the offending entry."""

    def __init__(self, key, msg):
        super().__init__(f"{key}: {msg}")
        self.key = key


class ExprSyntaxError(SddeError, ValueError):
    """DSL parse failure; ``column`` is 1-based."""

    def __init__(self, msg, column):
        super().__init__(f"{msg} at column {column}")
        self.column = column


class UnboundVariableError(SddeError, KeyError):
    """Expression evaluated without a binding for one of its variables."""


class GuardedDivisionError(SddeError, ZeroDivisionError):
    """Denominator fell below the guard declared on a division node."""


class InsufficientDataError(SddeError, ValueError):
    """Not enough samples for a diagnostic (no near-returns, window too short)."""
