class SetlistError(Exception):
    """
    Base class for every error raised by the setlist identification pipeline.

    The CLI maps subclasses to exit codes: ``UsageError`` exits with 1 and
    ``DataError`` exits with 2.
    """
    exit_code = 2


class UsageError(SetlistError):
    """Invalid command line or configuration file usage."""
    exit_code = 1


class DataError(SetlistError):
    """Invalid, corrupt or inconsistent input data."""
    exit_code = 2


# features
class BadMagic(DataError):
    pass


class VersionUnsupported(DataError):
    pass


class ShapeMismatch(DataError):
    pass


class EmptyFeature(DataError):
    pass


class NonFiniteValue(DataError):
    pass


class ValueOutOfRange(DataError):
    pass


class FactorOutOfRange(DataError):
    pass


class IoFailure(DataError):
    pass


# catalog
class ParseError(DataError):
    pass


class DuplicateId(DataError):
    pass


class MissingFile(DataError):
    pass


class UnknownEnumValue(DataError):
    pass


class UnknownSongId(DataError):
    pass


class OverlappingAnnotations(DataError):
    pass


class NegativeDuration(DataError):
    pass


class OverlappingEntries(DataError):
    pass


# backends
class TooShort(DataError):
    pass


class DegenerateProfile(DataError):
    pass


class LengthMismatch(DataError):
    pass


class DimensionMismatch(DataError):
    pass


class ZeroNorm(DataError):
    pass


class EmptyIndex(DataError):
    pass


# postprocess
class UnsortedInput(DataError):
    pass


class SingleClass(DataError):
    pass


class TooFewSamples(DataError):
    pass


# evaluation
class OverlappingSegments(DataError):
    pass


class UnknownConcert(DataError):
    pass


# synthkit
class DurationTooShort(DataError):
    pass


class CatalogTooSmall(DataError):
    pass


# pipeline
class EmptyCatalog(DataError):
    pass


class MissingResults(DataError):
    pass
