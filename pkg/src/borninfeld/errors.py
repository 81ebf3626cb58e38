"""Exception hierarchy shared by all modules."""


class BornInfeldError(Exception):
    """Base class for all package errors."""


class InvalidArgumentError(BornInfeldError, ValueError):
    pass


class InvalidGeometryError(BornInfeldError, ValueError):
    pass


class DomainError(BornInfeldError, ValueError):
    """A field or vector violates the gradient constraint ``|p|_sigma <= alpha``."""


class MollificationRadiusError(BornInfeldError, ValueError):
    def __init__(self, message, atom_index=None):
        super().__init__(message)
        self.atom_index = atom_index


class PointLocationError(BornInfeldError, ValueError):
    pass


class GradientUndefinedError(BornInfeldError, ValueError):
    def __init__(self, message, triangles=()):
        super().__init__(message)
        self.triangles = list(triangles)


class InvalidProblemError(BornInfeldError, ValueError):
    pass


class ConvergenceError(BornInfeldError, RuntimeError):
    """Iteration budget exhausted; ``trace`` holds the residual history, ``last_iterate`` the final u."""

    def __init__(self, message, trace=None, last_iterate=None):
        super().__init__(message)
        self.trace = list(trace or [])
        self.last_iterate = last_iterate


class PicardStallError(ConvergenceError):
    pass


class ConfigError(BornInfeldError, ValueError):
    def __init__(self, message, field=None):
        super().__init__(message if field is None else f"{field}: {message}")
        self.field = field


class BundleLoadError(BornInfeldError, IOError):
    pass
