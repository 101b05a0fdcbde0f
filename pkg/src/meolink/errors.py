"""Exception hierarchy shared by all modules."""


class MeolinkError(Exception):
    """Base class for every error raised by this package."""


class ParameterError(MeolinkError, ValueError):
    """Non-physical or inconsistent input parameter."""


class DomainError(MeolinkError, ValueError):
    """Argument outside the mathematical domain of a formula."""


class RangeError(MeolinkError, ValueError):
    """Query outside the span covered by a table or grid."""


class ValidationError(MeolinkError, ValueError):
    """A data structure violates one of its invariants."""


class ParseError(MeolinkError, ValueError):
    """Malformed input file. Carries the offending line number when known."""

    def __init__(self, message: str, line: int | None = None, path=None):
        self.line = line
        self.path = path
        where = ""
        if path is not None:
            where += f"{path}"
        if line is not None:
            where += f":{line}" if where else f"line {line}"
        super().__init__(f"{where}: {message}" if where else message)


class ConfigError(MeolinkError, ValueError):
    """Invalid run configuration."""


class NumericalError(MeolinkError, ArithmeticError):
    """Iteration failed to converge or a numeric bound was violated."""
