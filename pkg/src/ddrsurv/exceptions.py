"""Exception hierarchy shared across the package."""


class DDRSurvError(Exception):
    """Base class for all package errors."""


class SchemaError(DDRSurvError, KeyError):
    """A required column is missing from an input table."""

    def __str__(self):
        return Exception.__str__(self)


class ParseError(DDRSurvError, ValueError):
    """A cell could not be parsed as a number."""

    def __init__(self, message, row=None):
        super().__init__(message)
        self.row = row


class ValidationError(DDRSurvError, ValueError):
    """Input data violate a domain constraint (negative time, bad indicator)."""


class ParameterError(DDRSurvError, ValueError):
    """A distribution or model parameter is outside its domain."""


class DegenerateError(DDRSurvError, ValueError):
    """The data cannot support the requested fit (no events, one class, ...)."""


class ConvergenceError(DDRSurvError, RuntimeError):
    """An iterative fit diverged or produced non-finite values."""


class TrainingError(ConvergenceError):
    """Neural network training produced a non-finite loss or gradient."""

    def __init__(self, message, epoch=None):
        super().__init__(message)
        self.epoch = epoch


class BootstrapError(DDRSurvError, RuntimeError):
    """Too many bootstrap replicates failed."""

    def __init__(self, message, failures=()):
        super().__init__(message)
        self.failures = list(failures)


class DatasetMismatchError(DDRSurvError, ValueError):
    """Reports computed on different datasets were combined."""
