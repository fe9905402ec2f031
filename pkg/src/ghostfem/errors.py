"""Exception hierarchy.

Validation problems derive from :class:`ConfigError` (CLI exit code 2),
everything raised while computing derives from :class:`NumericalError`
(CLI exit code 3).
"""


class GhostFEMError(Exception):
    pass


class ConfigError(GhostFEMError, ValueError):
    """Invalid configuration or argument; ``path`` names the offending key."""

    def __init__(self, message, path=None):
        self.path = path
        super().__init__(f"{path}: {message}" if path else message)


class NumericalError(GhostFEMError, RuntimeError):
    pass


class DegenerateGeometryError(NumericalError):
    pass


class AmbiguousCutError(NumericalError):
    pass


class EmptyDomainError(NumericalError):
    pass


class NonConvergenceError(NumericalError):
    def __init__(self, message, iterations=None, residual=None):
        self.iterations = iterations
        self.residual = residual
        super().__init__(message)


class SingularMatrixError(NumericalError):
    def __init__(self, message, row=None):
        self.row = row
        super().__init__(message)


class BandViolationError(NumericalError):
    def __init__(self, message, distance=None, band=None):
        self.distance = distance
        self.band = band
        super().__init__(message)


class InsufficientDataError(NumericalError):
    pass
