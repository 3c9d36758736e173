"""Exception types shared across the package."""


class CbconvError(Exception):
    """Base class for all package errors."""


class DimensionError(CbconvError):
    """Matrix or vector dimensions are inconsistent."""


class PoleError(CbconvError):
    """Transfer function evaluated at (or numerically at) a system pole."""


class CareConvergenceError(CbconvError):
    """Riccati iteration failed to reach the residual gate."""

    def __init__(self, message, residual=None):
        super().__init__(message)
        self.residual = residual


class DesignGateError(CbconvError):
    """A filter-coefficient quality gate (residual, symmetry, stability) failed."""


class ParallelFormError(CbconvError):
    """Recursion matrices are too ill-conditioned for the diagonalized form."""


class StabilityError(CbconvError):
    """Simulation requested for a configuration without a stability guarantee."""


class InputBoundError(CbconvError):
    """Input signal exceeds the declared input bound."""


class SimulationDivergedError(CbconvError):
    """State magnitude ran away during simulation (no stable control)."""


class TraceFormatError(CbconvError):
    """Malformed control-trace, coefficients, or estimates file."""


class NoToneError(CbconvError):
    """No fundamental tone detectable where one is required."""
