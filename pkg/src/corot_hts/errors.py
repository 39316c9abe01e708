"""Exception types raised across the package."""


class CorotHtsError(Exception):
    """Base class for all package errors."""


class ParseError(CorotHtsError):
    """Malformed mesh or config file; carries the offending line number."""

    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class TopologyError(CorotHtsError):
    """Invalid mesh topology (zero-volume tet, face shared by >2 tets, ...)."""


class DegenerateFace(CorotHtsError):
    """Face with (near) zero area."""


class MaterialError(CorotHtsError):
    """Material parameters outside the admissible range."""


class NoConvergence(CorotHtsError):
    """An iterative solve hit its iteration limit."""

    def __init__(self, message, residual_norm=None, trace=None):
        super().__init__(message)
        self.residual_norm = residual_norm
        self.trace = trace


class SingularTangent(CorotHtsError):
    """Rotor Newton tangent is numerically singular (degenerate element)."""


class SingularNormalMatrix(CorotHtsError):
    """The 3x3 spin-filter normal matrix is not invertible."""


class SingularF(CorotHtsError):
    """Element flexibility block F cannot be factorized."""

    def __init__(self, message, element=None):
        super().__init__(message)
        self.element = element


class LinearSolveFailure(CorotHtsError):
    """Global sparse solve failed."""


class InsufficientConstraints(CorotHtsError):
    """Dirichlet data does not remove all six global rigid modes."""


class StepFailure(CorotHtsError):
    """Arc-length step failed after the maximum number of radius halvings."""


class ConfigError(CorotHtsError):
    """Invalid solver configuration; message names the offending field."""
