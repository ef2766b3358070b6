"""Exception hierarchy shared by all modules.

The CLI maps these onto exit codes: configuration problems exit with 2,
numerical instabilities with 3.
"""


class SuperdriftError(Exception):
    """Base class for library errors."""


class ConfigurationError(SuperdriftError, ValueError):
    """Invalid parameters, index relations, or grid/kernel mismatches."""


class GridMismatchError(ConfigurationError):
    """Two fields that must share a grid do not."""


class InstabilityError(SuperdriftError, ArithmeticError):
    """A solver blew up. ``step`` records the offending time step."""

    def __init__(self, message, step=None):
        super().__init__(message)
        self.step = step


class SimulationError(SuperdriftError, ArithmeticError):
    """A path produced a non-finite drift value."""

    def __init__(self, message, path_index=None):
        super().__init__(message)
        self.path_index = path_index


class SingularityError(SuperdriftError, ArithmeticError):
    """Unregularised kernel evaluated at (or too near) its singularity."""


class PicardDivergenceError(SuperdriftError, ArithmeticError):
    """Picard iteration failed to contract within ``max_iters``.

    This is a diagnostic rather than a crash: it carries the full residual
    history so callers can decide to raise the damping parameter.
    """

    def __init__(self, message, residuals, lam):
        super().__init__(message)
        self.residuals = list(residuals)
        self.lam = lam


class ChecksumError(SuperdriftError):
    """A manifest lists an artifact whose bytes no longer match."""
