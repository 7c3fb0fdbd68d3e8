"""Exception hierarchy shared by every module.

The CLI maps ``ConfigError`` to exit code 2 and ``NumericalError`` (and
subclasses) to exit code 3.
"""


class CasimirError(Exception):
    """Base class for all package errors."""


class ConfigError(CasimirError, ValueError):
    """Invalid user input: bad parameters, unknown ids, malformed files."""


class NumericalError(CasimirError, ArithmeticError):
    """A computation failed or produced an inconsistent result."""


class TruncationError(NumericalError):
    """A sum, quadrature or extrapolation did not reach its tolerance."""


class EvaluationError(NumericalError):
    """An integrand or matrix element evaluated to a non-finite value."""


class PerfectMetalError(CasimirError, TypeError):
    """A perfect-metal sentinel was asked for a numeric permittivity."""
