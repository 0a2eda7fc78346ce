"""Exception hierarchy shared across the library and the CLI.

The CLI maps these onto process exit codes: configuration / domain
errors exit with 2, numeric failures with 3, and a violated
minimum-eigenvalue assumption with 4.
"""


class JntkError(Exception):
    """Base class for all library errors."""


class ConfigError(JntkError):
    """Invalid configuration, CLI arguments, or input files."""

    exit_code = 2


class DomainError(ConfigError):
    """An argument violates a documented precondition (shape, norm, range)."""


class NumericError(JntkError):
    """A numerical procedure failed (non-convergence, divergence, non-PSD)."""

    exit_code = 3


class AssumptionViolation(JntkError):
    """The kernel Gram matrix is numerically singular.

    Raised when a solve is requested on a Gram whose minimum eigenvalue
    sits below the positivity threshold and no override was given.
    """

    exit_code = 4
