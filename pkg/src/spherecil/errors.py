"""Exception hierarchy shared across the package."""


class Error(Exception):
    """Base class for all package errors."""


class DimensionError(Error):
    pass


class AsymmetryError(Error):
    pass


class ConvergenceError(Error):
    def __init__(self, message, residual=None):
        super().__init__(message)
        self.residual = residual


class AntipodalError(Error):
    def __init__(self, message, angle=None):
        super().__init__(message)
        self.angle = angle


class BaseMismatchError(Error):
    pass


class DegenerateMeanError(Error):
    pass


class DegeneracyError(Error):
    pass


class InsufficientDataError(Error):
    pass


class FrozenTaskError(Error):
    pass


class MissingClassError(Error):
    pass


class DegenerateTaskError(Error):
    pass


class TrainingDivergedError(Error):
    def __init__(self, message, step=None):
        super().__init__(message)
        self.step = step


class GeometryError(Error):
    pass


class StageClosedError(Error):
    pass


class EmptyStateError(Error):
    pass


class UnknownVariantError(Error):
    pass


class ConfigError(Error):
    pass


class FormatError(Error):
    def __init__(self, message, offset=None):
        super().__init__(message)
        self.offset = offset


class StateVersionError(FormatError):
    pass


class StateDigestError(FormatError):
    pass
