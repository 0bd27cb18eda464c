"""Exception hierarchy shared by every cfbench module."""


class CfBenchError(Exception):
    """Base class for all library errors."""


class ValidationError(CfBenchError, ValueError):
    """Invalid input or configuration; maps to CLI exit code 1."""


# trajectory
class MissingColumn(ValidationError):
    pass


class NonUniformTimestep(ValidationError):
    pass


class CollisionInData(ValidationError):
    pass


class TooShort(ValidationError):
    pass


class SegmentTooShort(ValidationError):
    pass


class CollisionDuringSynthesis(CfBenchError):
    pass


# models
class NonPositiveSpacing(CfBenchError, ValueError):
    pass


class UnknownModelKind(ValidationError):
    pass


class DivergedToNonFinite(CfBenchError, ArithmeticError):
    pass


# kernels / regression
class DimensionMismatch(ValidationError):
    pass


class SingularKernelMatrix(CfBenchError, ArithmeticError):
    pass


class AllRestartsFailed(CfBenchError):
    pass


class ShapeMismatch(ValidationError):
    pass


class NonFiniteLoss(CfBenchError, ArithmeticError):
    pass


# evaluation
class LengthMismatch(ValidationError):
    pass


class EmptySeries(ValidationError):
    pass


class EmptyOverlap(ValidationError):
    pass


class DuplicateCell(ValidationError):
    pass


# anova
class SingleLevelFactor(ValidationError):
    pass


class PerfectCollinearity(CfBenchError, ArithmeticError):
    pass


class TooFewRows(ValidationError):
    pass


class InvalidDof(ValidationError):
    pass


class ConfigError(ValidationError):
    """Bad experiment configuration. ``key`` names the offending entry."""

    def __init__(self, message, key=None):
        super().__init__(message if key is None else f"{key}: {message}")
        self.key = key
