"""Exception types raised across the toolkit."""


class IrisError(Exception):
    """Base class for all toolkit errors."""


class UnsupportedFormat(IrisError):
    pass


class DimensionMismatch(IrisError):
    pass


class InvalidConfig(IrisError):
    pass


class InvalidParam(IrisError):
    pass


class NoCircleFound(IrisError):
    pass


class SegmentationOutOfBounds(IrisError):
    pass


class DegenerateCorners(IrisError):
    pass


class InsufficientOverlap(IrisError):
    """No rotation leaves enough commonly valid bits to score the pair."""


class InsufficientData(IrisError):
    pass


class InsufficientPairs(IrisError):
    pass


class EmptyScores(IrisError):
    pass


class EmptyInput(IrisError):
    pass


class IndexOutOfRange(IrisError, IndexError):
    pass


class EmptyDataset(IrisError):
    pass


class ObjectiveFailure(IrisError):
    pass


class ParseError(IrisError):
    def __init__(self, message, lineno=None):
        super().__init__(message if lineno is None else f"{message} (line {lineno})")
        self.lineno = lineno
