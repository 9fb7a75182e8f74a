"""Exception hierarchy shared by all pipeline stages."""


class AlarmError(Exception):
    """Base class for every error raised by this package."""


# volgrid
class FormatError(AlarmError):
    pass


class BadMagic(FormatError):
    pass


class UnsupportedDatatype(FormatError):
    pass


class DimMismatch(FormatError):
    pass


class NonFinite(FormatError):
    pass


class ObliqueAffine(FormatError):
    pass


class SidecarMismatch(FormatError):
    pass


class IoFailure(AlarmError):
    pass


class InvalidSpacing(AlarmError):
    pass


class GeometryMismatch(AlarmError):
    pass


# segment
class EmptySegmentation(AlarmError):
    pass


class ExternalFailed(AlarmError):
    pass


class InvalidConfig(AlarmError):
    pass


# morph
class EmptyMask(AlarmError):
    pass


class TooSmall(AlarmError):
    pass


# roi
class RayEscaped(AlarmError):
    pass


class DegenerateRay(AlarmError):
    pass


class EmptyCircle(AlarmError):
    pass


class PipelineError(AlarmError):
    """Wraps an upstream failure with the name of the stage that raised it."""

    def __init__(self, stage: str, cause: Exception):
        self.stage = stage
        self.cause = cause
        super().__init__(f"[{stage}] {type(cause).__name__}: {cause}")


# agree
class DegenerateSeries(AlarmError):
    pass


class UndefinedKappa(AlarmError):
    pass


class EmptySeries(AlarmError):
    pass


class IdMismatch(AlarmError):
    pass


# phantom
class InvalidSpec(AlarmError):
    pass


# cli
class SliceOutOfRange(AlarmError):
    pass
