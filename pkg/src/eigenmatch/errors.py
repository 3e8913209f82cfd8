"""Exception types shared across the package.

The CLI maps these onto its documented exit codes; library callers can
catch ``EigenmatchError`` to handle everything in one place.
"""


class EigenmatchError(Exception):
    """Base class for all errors raised by this package."""


class FormatError(EigenmatchError):
    """A binary or text container is malformed (bad magic, version, syntax)."""


class TruncationError(EigenmatchError):
    """Declared payload size disagrees with the bytes actually present."""


class ValidationError(EigenmatchError):
    """A value violates a type invariant or an operation precondition."""


class DimensionError(EigenmatchError):
    """Shapes or lengths of related inputs do not agree."""


class CapacityError(EigenmatchError):
    """Fewer usable eigenvectors are available than were requested."""

    def __init__(self, available: int, requested: int):
        self.available = available
        self.requested = requested
        super().__init__(
            f"only {available} non-trivial eigenvectors available, "
            f"{requested} requested"
        )


class InsufficientMatchesError(EigenmatchError):
    """Too few correspondences for the requested estimation."""


class DegeneracyError(EigenmatchError):
    """A point configuration does not determine a unique solution."""


class NumericalError(EigenmatchError):
    """An iterative numerical procedure failed to make progress."""


class PointAtInfinityError(EigenmatchError):
    """Projective mapping sent a point to infinity."""

    def __init__(self, index: int, point):
        self.index = index
        self.point = tuple(point)
        super().__init__(
            f"point {self.point} at index {index} maps to infinity "
            "(third homogeneous coordinate ~ 0)"
        )


class UsageError(EigenmatchError):
    """Command line arguments or manifest contents are unusable."""
