"""Exception hierarchy shared across the package."""


class BLTError(Exception):
    """Base class for all package errors."""


class ValidationError(BLTError, ValueError):
    """An input violates a documented invariant."""

    def __init__(self, message, violations=None):
        super().__init__(message)
        self.violations = list(violations or [])


class DomainError(ValidationError):
    """A value lies outside the domain of a mathematical operation."""


class GeometryError(BLTError):
    """A geometric query could not be answered (point off mesh, ...)."""


class ResourceLimitError(BLTError):
    """A request would exceed a configured resource cap."""


class AssemblyError(BLTError):
    """Finite element assembly failed, typically on a degenerate element."""


class SolverError(BLTError):
    """A linear solve failed to reach its tolerance."""

    def __init__(self, message, residual=None):
        super().__init__(message)
        self.residual = residual


class RepresentationError(ValidationError):
    """A source field cannot be converted between representations."""


class JacobianError(BLTError):
    """No admissible finite-difference step exists for a parameter."""


class QuadratureError(BLTError):
    """Adaptive quadrature did not reach the requested tolerance."""

    def __init__(self, message, achieved=None):
        super().__init__(message)
        self.achieved = achieved


class DatasetError(BLTError, ValueError):
    """A dataset file is malformed."""


class DatasetVersionError(DatasetError):
    """A dataset file carries an unsupported version tag."""


class MeshQualityWarning(UserWarning):
    """Emitted when a generated mesh falls below the quality floors."""
