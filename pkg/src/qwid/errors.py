"""Exception hierarchy shared across the package."""


class QwidError(Exception):
    """Base class for all errors raised by qwid."""


class QuantRangeError(QwidError, ValueError):
    """Invalid real range (lo > hi or non-finite bounds)."""


class QuantInputError(QwidError, ValueError):
    """Non-finite value handed to the quantizer."""


class ArgumentError(QwidError, ValueError):
    pass


class ShapeError(QwidError, ValueError):
    pass


class ContractError(QwidError, ValueError):
    """A kernel or pass was called outside its preconditions."""


class EmptyObserverError(QwidError, RuntimeError):
    pass


class GraphError(QwidError, ValueError):
    """Graph is malformed or inconsistent with its numeric mode."""


class ConversionError(QwidError, RuntimeError):
    pass


class DatasetError(QwidError, ValueError):
    pass


class MalformedImageError(DatasetError):
    pass
