"""Exception types raised across the package."""


class IREEError(Exception):
    """Base class for all package errors."""


class InvalidInputError(IREEError, ValueError):
    """A parameter is non-finite, out of range or otherwise malformed."""


class UndefinedDivergenceError(IREEError, ValueError):
    """JS divergence requested for a field whose total is zero."""


class LengthMismatchError(IREEError, ValueError):
    """A field file does not have one row per grid sample."""


class NegativeValueError(IREEError, ValueError):
    """A density field contains a negative entry."""


class FieldParseError(IREEError, ValueError):
    """A field file could not be parsed."""


class ScenarioParseError(IREEError, ValueError):
    """A scenario file is malformed."""


class TrainingAbortedError(IREEError, RuntimeError):
    """Training produced a non-finite loss.

    ``snapshot`` holds the last finite parameter vector and ``context`` a
    dict describing where the failure happened (epoch, stage, iteration).
    """

    def __init__(self, message, snapshot=None, context=None):
        super().__init__(message)
        self.snapshot = snapshot
        self.context = dict(context or {})
