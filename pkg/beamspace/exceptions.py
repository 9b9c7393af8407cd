"""
=============================================================================
Workbench Exceptions
=============================================================================

Every error raised on purpose by the workbench derives from WorkbenchError,
so the management commands can turn them into a single CommandError line.

Author: TRR Workbench Team
=============================================================================
"""


class WorkbenchError(Exception):
    """Base class for all workbench errors."""


# =============================================================================
# SHAPE & INPUT ERRORS
# =============================================================================

class InvalidDimensionError(WorkbenchError):
    """A size argument (antennas, rows, layers...) is out of range."""


class DimensionMismatchError(WorkbenchError):
    """Two operands do not have compatible shapes."""


class DegenerateInputError(WorkbenchError):
    """The input makes the operation undefined (zero norm, zero matrix)."""


class TopKRangeError(WorkbenchError):
    """A top-K parameter lies outside [0, length]."""


# =============================================================================
# NUMERICAL ERRORS
# =============================================================================

class DegenerateStepError(WorkbenchError):
    """Barzilai-Borwein step requested for two identical iterates."""


class PowerIterationError(WorkbenchError):
    """Power iteration did not reach its tolerance."""


class NumericalError(WorkbenchError):
    """A least-squares system became singular."""


class IllConditionedError(WorkbenchError):
    """A Gram matrix is too ill-conditioned to invert reliably."""


# =============================================================================
# NETWORK & TRAINING ERRORS
# =============================================================================

class EmptyBatchError(WorkbenchError):
    """A loss or metric was requested over zero samples."""


class TraceMismatchError(WorkbenchError):
    """A forward trace does not belong to the parameters/inputs given."""


class TrainingDivergedError(WorkbenchError):
    """Training loss became NaN or infinite."""


class EmptyEnsembleError(WorkbenchError):
    """An ensemble prediction was requested with no models."""


# =============================================================================
# WORKBENCH ERRORS
# =============================================================================

class ConfigError(WorkbenchError):
    """
    Invalid experiment configuration.

    Carries one diagnostic per offending field, each formatted as
    "line N: field: message" when the line is known.
    """

    def __init__(self, diagnostics):
        if isinstance(diagnostics, str):
            diagnostics = [diagnostics]
        self.diagnostics = list(diagnostics)
        super().__init__("; ".join(self.diagnostics))


class FormatError(WorkbenchError):
    """A dataset or model file is corrupt, truncated or of another version."""


class UnknownSolverError(WorkbenchError):
    """The requested solver name is not registered."""
