"""Exception types shared across the package."""


class BetamixError(Exception):
    """Base class for all package-specific errors."""


class ValidationError(BetamixError, ValueError):
    """A probability object violates its invariants (negative mass, bad sums, ...)."""


class SizeError(BetamixError, ValueError):
    """An input is too large for an exact/exhaustive computation."""


class ConfigError(BetamixError, ValueError):
    """A spec, name, or config file is malformed or names an unsupported component."""


class DomainError(BetamixError, ValueError):
    """A numeric parameter violates a bound formula's precondition."""


class FitError(BetamixError, RuntimeError):
    """Too little (or degenerate) data to perform a requested fit."""


class MomentError(BetamixError, ValueError):
    """Moment inputs make every candidate bound infinite."""


class ModelViolationError(BetamixError, ValueError):
    """A quantity the regression model assumes positive came out nonpositive."""
