"""Exception hierarchy shared by the library and the command line."""


class VcountError(Exception):
    """Base class for all package errors."""


class DataError(VcountError, ValueError):
    """Input data (audio, annotations, manifests, caches) is malformed."""


class AudioFormatError(DataError):
    """WAV file is valid RIFF but uses a layout we do not accept.

    ``code`` is one of ``"container"``, ``"channels"``, ``"encoding"`` or
    ``"sample_rate"`` so callers can branch without parsing messages.
    """

    def __init__(self, code, message):
        super().__init__(message)
        self.code = code


class NumericalError(VcountError, ArithmeticError):
    """A numerical routine produced non-finite or otherwise unusable output."""
