"""Exception types shared across the toolkit."""


class SimtransError(Exception):
    """Base class for all toolkit errors."""


class ArgumentError(SimtransError, ValueError):
    """An argument violates an operation's precondition."""


class DataError(SimtransError):
    """Input data is inconsistent (line counts, missing corpora, over-long sentences)."""


class FormatError(SimtransError):
    """A file does not follow its expected on-disk format."""


class ShapeError(FormatError):
    """A stored tensor does not match the shape the model expects."""


class NumericError(SimtransError, ArithmeticError):
    """A computation produced a non-finite value."""


class UndefinedCorrelationError(ArgumentError):
    """Correlation requested for data with zero variance."""
