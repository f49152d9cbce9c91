"""Exception types raised across the package."""


class PbaError(Exception):
    """Base class for all errors raised by pbpba."""


class NonPositiveDepth(PbaError):
    pass


class BehindCamera(PbaError):
    pass


class OutOfBounds(PbaError):
    pass


class DegenerateTriplet(PbaError):
    pass


class NonUnitDirection(PbaError):
    pass


class BackFacing(PbaError):
    pass


class TooFewValidPixels(PbaError):
    pass


class EmptyControlSet(PbaError):
    pass


class NonPositiveScale(PbaError):
    pass


class SingularNormalEquations(PbaError):
    pass


class Diverged(PbaError):
    pass


class TooFewCorrespondences(PbaError):
    pass


class DegeneratePosition(PbaError):
    pass


class IoFailure(PbaError):
    pass


class ConfigError(PbaError):
    pass
