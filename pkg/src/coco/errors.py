"""Exception hierarchy shared across the package."""


class CocoError(Exception):
    """Base class for all package errors."""


class SchemaError(CocoError):
    """Input file does not follow the expected column/field layout."""

    def __init__(self, message, row=None, column=None):
        self.row = row
        self.column = column
        where = []
        if row is not None:
            where.append(f"row {row}")
        if column is not None:
            where.append(f"column {column!r}")
        if where:
            message = f"{message} ({', '.join(where)})"
        super().__init__(message)


class RangeError(SchemaError):
    """A confidence value lies outside [0, 1]."""


class SplitError(CocoError):
    pass


class StatisticsError(CocoError):
    pass


class FormulaSyntaxError(CocoError):
    def __init__(self, message, position):
        self.position = position
        super().__init__(f"{message} at position {position}")


class UnknownVariableError(CocoError):
    pass


class VariableLimitError(CocoError):
    pass


class MissingMonitorError(CocoError):
    pass


class MetricsError(CocoError):
    pass


class UndefinedAUCError(MetricsError):
    pass


class DegenerateFitError(CocoError):
    """Fitting data holds a single class, so the objective has no minimizer."""


class ConvergenceError(CocoError):
    def __init__(self, message, grad_norm):
        self.grad_norm = grad_norm
        super().__init__(f"{message} (final gradient norm {grad_norm:.3e})")


class BoundInputError(CocoError):
    pass


class PreconditionError(CocoError):
    """A synthetic space fails a theorem precondition check."""


class MonitorConfigError(CocoError):
    pass


class ControllerError(CocoError):
    pass


class MalformedTraceError(CocoError):
    pass


class ConfigError(CocoError):
    pass
