"""Exception hierarchy shared by every quadsketch module."""


class QuadSketchError(Exception):
    """Base class for all library errors."""


class InvalidParams(QuadSketchError, ValueError):
    pass


class TooFewPoints(QuadSketchError, ValueError):
    pass


class DuplicatePoints(QuadSketchError, ValueError):
    pass


class DegeneratePointSet(QuadSketchError, ValueError):
    """Raised when every point coincides, so no enclosing cube can be sized."""


class BlockMismatch(QuadSketchError, ValueError):
    pass


class CorruptSketch(QuadSketchError):
    """Malformed sketch bytes. ``offset`` is the byte position of the failure."""

    def __init__(self, message, offset=None):
        if offset is not None:
            message = f"{message} (at byte {offset})"
        super().__init__(message)
        self.offset = offset


class VersionMismatch(CorruptSketch):
    pass


class LeafOutOfRange(QuadSketchError, IndexError):
    pass


class IndexOutOfRange(QuadSketchError, IndexError):
    pass


class AmplificationExhausted(QuadSketchError, RuntimeError):
    """The max-distortion construction could not halve the unpadded set."""


class EmptyInput(QuadSketchError, ValueError):
    pass


class DataError(QuadSketchError):
    """Base class for dataset loading failures."""


class MalformedRecord(DataError):
    pass


class DimensionMismatch(DataError):
    pass


class BadMagic(DataError):
    pass


class NormZero(DataError):
    pass


class ParseError(DataError):
    pass


class CountTooLarge(QuadSketchError, ValueError):
    pass
