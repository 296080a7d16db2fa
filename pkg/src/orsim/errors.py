"""Exception hierarchy.

Every error raised by the library derives from :class:`ORSimError`. The CLI
maps the three families below onto its exit codes.
"""


class ORSimError(Exception):
    pass


class ValidationError(ORSimError, ValueError):
    """Bad argument or configuration (CLI exit code 2)."""


class DataFormatError(ORSimError):
    """Malformed or inconsistent on-disk data (CLI exit code 3)."""


class InvariantViolation(ORSimError, AssertionError):
    """An internal consistency check failed (CLI exit code 4)."""


# -- geometry / vectors -------------------------------------------------------

class ZeroVector(ValidationError):
    pass


class DimensionMismatch(ValidationError):
    pass


class OutOfRange(ValidationError):
    pass


# -- scoring / ranking --------------------------------------------------------

class EmptyRow(ValidationError):
    pass


class EmptyGallery(ValidationError):
    pass


class InvalidK(ValidationError):
    pass


# -- evaluation ---------------------------------------------------------------

class UnknownFrame(DataFormatError):
    pass


class NoGroundTruth(ValidationError):
    pass


# -- dataset ------------------------------------------------------------------

class FormatError(DataFormatError):
    pass


class CountMismatch(DataFormatError):
    pass


class DanglingFrameRef(DataFormatError):
    pass


class DimensionZero(DataFormatError):
    pass


class UnknownProbe(ValidationError):
    pass


class SizeTooLarge(ValidationError):
    pass


class ConfigError(ValidationError):
    pass
