"""Exception hierarchy.

Two families matter to callers: ``FormatError`` (bad input files or
parameters, CLI exit code 2) and ``ComputationError`` (a metric or
statistic is undefined for the given data, CLI exit code 3).
"""


class GammaAuditError(Exception):
    """Base class for all package errors."""


class FormatError(GammaAuditError, ValueError):
    """Malformed grid, config or parameter."""


class UnknownVersion(FormatError):
    pass


class ComputationError(GammaAuditError):
    """A requested quantity cannot be computed for this data."""


class OutOfBounds(ComputationError, ValueError):
    pass


class RoiTooSmall(ComputationError):
    pass


class EmptyMask(ComputationError):
    pass


class GeometryMismatch(ComputationError):
    pass


class EmptyMap(ComputationError):
    pass


class ZeroMass(ComputationError):
    pass


class EmptyFactor(ComputationError, ValueError):
    pass


class UnbalancedDesign(ComputationError):
    pass


class SingularFit(ComputationError):
    pass


class NonFiniteResponse(ComputationError):
    pass


class ZeroVariance(ComputationError):
    pass


class ConstantInput(ComputationError):
    pass


class LengthMismatch(ComputationError, ValueError):
    pass


class TooFewSamples(ComputationError):
    pass


class MisalignedDesigns(ComputationError):
    pass
