class ThresholdSimError(Exception):
    """Base class for every error raised by thresholdsim."""
    pass


class DomainError(ThresholdSimError, ValueError):
    """Raised when an argument lies outside the domain of an operation."""
    pass


class RegimeError(DomainError):
    """Raised when an asymptotic formula is used outside its regime."""
    pass


class UsageError(DomainError):
    """Raised when a command names something that does not exist (figure key, table)."""
    pass


class MisuseError(ThresholdSimError, TypeError):
    """Raised when an operation receives the wrong kind of model."""
    pass


class LimitUndefinedError(ThresholdSimError):
    """Raised when f_eta(0+) is needed but the gain model has no finite positive limit."""
    pass


class NumericalError(ThresholdSimError, ArithmeticError):
    """Raised when a numerical procedure fails; diagnostics holds the details."""

    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = dict(diagnostics or {})

    def __str__(self):
        base = super().__str__()
        if not self.diagnostics:
            return base
        detail = ", ".join(f"{k}={v!r}" for k, v in self.diagnostics.items())
        return f"{base} ({detail})"


class ConsistencyError(NumericalError):
    """Raised when an internal invariant is violated by a computed value."""
    pass


class ConfigError(ThresholdSimError):
    """Raised when an experiment config cannot be parsed or validated."""

    def __init__(self, message, field=None, line=None):
        self.field = field
        self.line = line
        where = []
        if field is not None:
            where.append(f"field '{field}'")
        if line is not None:
            where.append(f"line {line}")
        super().__init__(f"{message} [{', '.join(where)}]" if where else message)


EXIT_OK = 0
EXIT_VALIDATION = 1
EXIT_NUMERICAL = 2
EXIT_IO = 3


def exit_code_for(exc):
    """Map an exception onto the CLI exit-code contract; None for unexpected errors."""
    if isinstance(exc, (ConfigError, DomainError, MisuseError)):
        return EXIT_VALIDATION
    if isinstance(exc, (NumericalError, LimitUndefinedError, FloatingPointError)):
        return EXIT_NUMERICAL
    if isinstance(exc, OSError):
        return EXIT_IO
    return None
