"""Exception hierarchy shared across the package.

The CLI maps these onto exit codes: usage problems exit 1, data problems
exit 2, numerical failures exit 3.
"""


class SweepreconError(Exception):
    """Base class for all package errors."""


class UsageError(SweepreconError):
    """Bad command-line usage or missing required arguments."""

    exit_code = 1


class DataError(SweepreconError):
    """Malformed input: bundle, config, mesh file, or inconsistent metadata."""

    exit_code = 2


class NumericError(SweepreconError):
    """Numerical failure: divergence, non-convergence, non-finite values."""

    exit_code = 3


class TrainingDivergedError(NumericError):
    """Training loss exploded past the divergence guard."""


class NonFiniteError(NumericError):
    """A non-finite value appeared in a computation."""


class SolverConvergenceError(NumericError):
    """Iterative solver failed to reach the requested tolerance."""


class EmptyPointCloudError(NumericError):
    """No points above threshold; usually signals failed training."""
