"""Exception hierarchy shared by every stage of the pipeline."""


class TrafficLensError(Exception):
    """Base class for data errors (CLI exit code 2)."""


class FormatError(TrafficLensError):
    pass


class BadMagic(FormatError):
    pass


class Truncated(FormatError):
    pass


class VersionMismatch(FormatError):
    pass


class CountMismatch(FormatError):
    pass


class UnsupportedLinktype(FormatError):
    pass


class UnsupportedFormat(FormatError):
    """Raised for recognised but unsupported containers such as pcapng."""


class NoUnits(TrafficLensError):
    pass


class WrongLength(TrafficLensError):
    pass


class TooManyClasses(TrafficLensError):
    pass


class EmptyFlow(TrafficLensError):
    pass


class ShapeMismatch(TrafficLensError):
    pass


class OddDimension(TrafficLensError):
    pass


class BadTarget(TrafficLensError):
    pass


class EmptyDataset(TrafficLensError):
    pass


class DimensionMismatch(TrafficLensError):
    pass


class TooSmall(TrafficLensError):
    pass


class MissingClass(TrafficLensError):
    pass


class EmptyTestSet(TrafficLensError):
    pass


class TooFewSamples(TrafficLensError):
    pass
