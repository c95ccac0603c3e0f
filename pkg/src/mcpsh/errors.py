"""Exception hierarchy shared across the package."""


class MCPSHError(Exception):
    """Base class for every error raised by mcpsh."""


class DataError(MCPSHError, ValueError):
    """Invalid input records."""


class NonPositiveTime(DataError):
    pass


class DimensionMismatch(DataError):
    pass


class UnknownStatusCode(DataError):
    pass


class DegenerateStratum(MCPSHError):
    """A stratum is too small for a per-stratum censoring estimate."""


class ZeroDenominator(MCPSHError, ZeroDivisionError):
    """The censoring survival is zero where a weight denominator needs it."""


class NumericOverflow(MCPSHError, FloatingPointError):
    pass


class SingularInformation(MCPSHError, ArithmeticError):
    """The (penalized) information matrix could not be inverted."""


# the solver raises the same condition for penalized systems
SingularSystem = SingularInformation


class UnpenalizedFitRequired(MCPSHError):
    """Adaptive weights need a converged unpenalized fit."""


class EmptyActiveSet(MCPSHError):
    pass


class InversionFailure(MCPSHError):
    pass


class NoEvaluablePairs(MCPSHError):
    pass


class DegeneratePI(MCPSHError):
    pass


class HorizonBeyondSupport(MCPSHError):
    pass


class HighStratificationUnsupported(MCPSHError):
    pass


class MissingFactor(MCPSHError, KeyError):
    pass


class ConfigError(MCPSHError):
    """Inconsistent command-line configuration."""
