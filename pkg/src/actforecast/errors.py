"""Exception types shared across the package."""


class ActForecastError(Exception):
    """Base class for package errors."""


class ShapeError(ActForecastError, ValueError):
    """Operand shapes are incompatible."""


class DomainError(ActForecastError, ValueError):
    """An input lies outside the domain of an operation (e.g. log of a non-positive value)."""


class ContractError(ActForecastError, ValueError):
    """A precondition of an operation was violated."""


class ConfigError(ActForecastError):
    """Invalid or inconsistent run configuration."""


class ValidationError(ActForecastError, ValueError):
    """A corpus record violates a data invariant."""


class CorpusParseError(ValidationError):
    """A corpus file could not be parsed."""


class GrammarError(ActForecastError, ValueError):
    """An activity grammar is malformed."""


class ConvergenceWarning(UserWarning):
    """An iterative solver stopped before reaching its tolerance."""
