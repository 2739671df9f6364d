"""Exception hierarchy shared by all modules."""


class DLMError(Exception):
    """Base class for solver errors."""


class InvalidGeometry(DLMError, ValueError):
    pass


class PointOutsideDomain(DLMError):
    """A point (usually a mapped solid quadrature point) is not in the fluid domain."""

    def __init__(self, message, point=None, solid_cell=None, quad_index=None):
        super().__init__(message)
        self.point = point
        self.solid_cell = solid_cell
        self.quad_index = quad_index


class UnsupportedElement(DLMError, ValueError):
    pass


class UnsupportedQuadrature(DLMError, ValueError):
    pass


class BlockShapeError(DLMError, ValueError):
    pass


class SingularSystem(DLMError):
    pass


class EigenFailure(DLMError):
    pass


class EnergyViolation(DLMError):
    def __init__(self, message, step=None, excess=None):
        super().__init__(message)
        self.step = step
        self.excess = excess


class MMSInconsistent(DLMError):
    pass


class ConfigError(DLMError, ValueError):
    def __init__(self, message, key=None):
        super().__init__(f"{key}: {message}" if key else message)
        self.key = key


class InvertibilityWarning(UserWarning):
    """The solid map is close to losing injectivity."""
