"""Exception hierarchy shared by all modules."""


class PartlinError(Exception):
    """Base class for every error raised by this package."""


class ParseError(PartlinError, ValueError):
    pass


class DomainError(PartlinError, ValueError):
    pass


class StepFailure(PartlinError, RuntimeError):
    pass


class BlowUp(PartlinError, RuntimeError):
    pass


class HorizonTooShort(PartlinError, ValueError):
    pass


class GridTooCoarse(PartlinError, RuntimeError):
    pass


class EnvelopeViolation(PartlinError, RuntimeError):
    pass


class OrderingError(PartlinError, ValueError):
    pass


class ParamError(PartlinError, ValueError):
    pass


class IllConditioned(PartlinError, RuntimeError):
    pass


class TailBoundUnavailable(PartlinError, ValueError):
    pass


class QuadratureFailure(PartlinError, RuntimeError):
    pass


class InverseDiverged(PartlinError, RuntimeError):
    pass


class GapFailure(PartlinError, RuntimeError):
    """A spectral-gap condition required by a stage does not hold."""

    def __init__(self, message, report=None, stage_index=None):
        super().__init__(message)
        self.report = report
        self.stage_index = stage_index


class SpectrumNotSeparated(PartlinError, RuntimeError):
    pass
