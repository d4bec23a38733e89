"""Exception hierarchy shared by the library and the CLI."""


class OEDPMError(Exception):
    """Base class for all errors raised by this package."""

    exit_code = 1


class UsageError(OEDPMError, ValueError):
    """A caller passed arguments that violate an operation's preconditions."""

    exit_code = 2


class DomainError(UsageError):
    """Argument outside the mathematical domain of a function."""


class ConfigError(UsageError):
    """Invalid detector or run configuration."""

    exit_code = 2


class DataError(OEDPMError):
    """Input data could not be read or is malformed."""

    exit_code = 3


class MissingFileError(DataError, FileNotFoundError):
    pass


class RaggedRowError(DataError):
    pass


class NonNumericCellError(DataError):
    def __init__(self, message, row=None, column=None):
        super().__init__(message)
        self.row = row
        self.column = column


class MissingLabelColumnError(DataError, KeyError):
    def __str__(self):
        return Exception.__str__(self)


class NumericError(OEDPMError, ArithmeticError):
    """A numerical routine failed (non-PD matrix, non-finite objective, ...)."""

    exit_code = 4


class NotPositiveDefiniteError(NumericError):
    """Cholesky factorization failed.

    ``pivot`` is the zero-based index of the first non-positive pivot and
    ``component`` optionally names the mixture component that owns the matrix.
    """

    def __init__(self, pivot, component=None):
        self.pivot = pivot
        self.component = component
        where = "" if component is None else f" for component {component}"
        super().__init__(f"matrix is not positive definite{where}: pivot {pivot} <= 0")


class ComponentFitError(NumericError):
    """An ensemble component failed; carries its index."""

    def __init__(self, index, cause):
        self.index = index
        self.cause = cause
        super().__init__(f"ensemble component {index} failed: {cause}")
