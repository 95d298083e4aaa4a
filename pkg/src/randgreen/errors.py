"""Exception hierarchy shared by all modules."""


class RandGreenError(Exception):
    """Base class for every error raised by the package."""


class DimensionTooSmall(RandGreenError, ValueError):
    pass


class NotNormalizable(RandGreenError, ValueError):
    pass


class AsymmetricKernel(RandGreenError, ValueError):
    pass


class MomentDiverges(RandGreenError, ArithmeticError):
    pass


class GridTooSmall(RandGreenError, ValueError):
    pass


class SlowConvergence(RandGreenError, ArithmeticError):
    pass


class SingularityOrderViolation(RandGreenError, ArithmeticError):
    pass


class NonpositiveLambda(RandGreenError, ValueError):
    pass


class CoincidingPoints(RandGreenError, ValueError):
    pass


class InsufficientDecade(RandGreenError, ValueError):
    pass


class EllipticityViolation(RandGreenError, ValueError):
    pass


class StepTooLarge(RandGreenError, ArithmeticError):
    pass


class OverlappingBoxes(RandGreenError, ValueError):
    pass


class NotInCL(RandGreenError, ValueError):
    pass


class SupportEscapesGrid(RandGreenError, ValueError):
    pass


class SymmetryViolation(RandGreenError, ValueError):
    pass


class ConfigParse(RandGreenError, ValueError):
    """Raised for malformed CLI configs; ``field`` names the offending key."""

    def __init__(self, message, field=None, line=None):
        super().__init__(message)
        self.field = field
        self.line = line
