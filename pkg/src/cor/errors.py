"""Exception types shared across the package."""


class CorError(Exception):
    """Base class for all package errors."""


class DimensionError(CorError, ValueError):
    pass


class DegenerateVector(CorError, ValueError):
    pass


class EmptyMask(CorError, ValueError):
    pass


class EmptyText(CorError, ValueError):
    pass


class InvalidMask(CorError, ValueError):
    pass


class NonFiniteError(CorError, FloatingPointError):
    pass


class InputError(CorError, ValueError):
    pass


class ParseError(CorError, ValueError):
    def __init__(self, message, index=None):
        if index is not None:
            message = f"record {index}: {message}"
        super().__init__(message)
        self.index = index


class UnsupportedSetting(CorError, ValueError):
    pass


class CheckpointError(CorError):
    pass


class VlmProtocolError(CorError):
    """The validator replied with something other than the agreed format."""


class VlmFormatError(VlmProtocolError):
    pass


class RetryExhausted(CorError):
    pass


class EmptyPrediction(CorError):
    pass
