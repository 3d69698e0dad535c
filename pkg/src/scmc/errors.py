"""Exception hierarchy for scmc.

Every error carries the process exit code the CLI reports for it:
2 for configuration problems, 3 for bad input data, 4 for numerical failures.
"""


class ScmcError(Exception):
    """Base class for all scmc errors."""

    exit_code = 1


class ConfigError(ScmcError):
    """Exception raised for invalid configuration or parameters."""

    exit_code = 2


class ParameterError(ConfigError):
    """A numeric parameter is outside its admissible range."""


class CapacityError(ConfigError):
    """A requested size exceeds what the data (or an exact oracle) supports."""


class DataError(ScmcError):
    """Exception raised for invalid or inconsistent input data."""

    exit_code = 3


class ParseError(DataError):
    """A data file could not be parsed.

    Attributes:
        line: 1-based line number of the offending record, if known
    """

    def __init__(self, message: str, line: int | None = None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class EmptyMatrixError(DataError):
    """A matrix has no observed entries."""


class DegenerateMaskError(DataError):
    """An observation mask is all observed or all missing."""


class SizeError(DataError):
    """More items were requested than the universe holds."""


class WeightError(DataError):
    """Weights are negative, nonpositive where required, or not finite."""


class DomainError(DataError):
    """An argument lies outside the domain of the operation."""


class InfeasibleError(DataError):
    """No admissible outcome exists (e.g. empty pruned missing set)."""


class NumericalError(ScmcError):
    """Exception raised when a numerical routine fails."""

    exit_code = 4


class ConvergenceError(NumericalError):
    """An iterative solver did not converge."""


class QuadratureError(NumericalError):
    """Adaptive quadrature failed to reach the requested accuracy."""


class NormalizationError(NumericalError):
    """A probability vector does not sum to one."""


class DegenerateWeightsError(NumericalError):
    """Conformalization weights are undefined for the given inputs."""
