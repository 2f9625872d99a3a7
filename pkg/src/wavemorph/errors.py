"""Exception hierarchy shared by the library and the CLI exit-code contract."""


class WavemorphError(Exception):
    """Base class for all package errors."""

    exit_code = 1


class ConfigError(WavemorphError, ValueError):
    exit_code = 2


class InputError(WavemorphError, ValueError):
    exit_code = 2


class SelectionError(WavemorphError):
    exit_code = 3


class MetricError(WavemorphError, ValueError):
    exit_code = 2


class ArtifactError(WavemorphError):
    """A required on-disk artifact is missing or inconsistent."""

    exit_code = 3


class NumericError(WavemorphError, ArithmeticError):
    """Training produced a non-finite loss or gradient."""

    exit_code = 4


class ImageNotFoundError(WavemorphError, FileNotFoundError):
    exit_code = 3


class UnsupportedFormatError(WavemorphError):
    exit_code = 3


class CorruptImageError(WavemorphError):
    exit_code = 3


class InternalError(WavemorphError, RuntimeError):
    """Inconsistent internal state, e.g. a forward cache reused with other parameters."""

    exit_code = 4
