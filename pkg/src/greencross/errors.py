"""Exception types shared across the package."""


class GreencrossError(Exception):
    """Base class for all package errors."""


class MeshFormatError(GreencrossError):
    """Malformed mesh file or invalid mesh data.

    Carries the 1-based line number of the offending line when known.
    """

    def __init__(self, message, line=None):
        if line is not None:
            message = "line %d: %s" % (line, message)
        super().__init__(message)
        self.line = line


class SizeLimitError(GreencrossError):
    """A desk-scale guard refused the requested problem size."""


class ConfigError(GreencrossError):
    """Invalid experiment configuration."""


class GeometryError(GreencrossError):
    """Geometric precondition violated (point off the reference triangle,
    quadrature points touching the surface, ...)."""


class StateError(GreencrossError):
    """Operation called on an object in the wrong state."""
