"""Exception types shared across the package."""


class SkelviewError(Exception):
    """Base class for all package errors."""


class ParseError(SkelviewError):
    """Malformed input file. Carries the 1-based line number when known."""

    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class UnsupportedSkeleton(SkelviewError):
    """Skeleton layout the reader does not handle (e.g. joint count != 25)."""


class EmptySequence(SkelviewError):
    """A sequence with zero frames."""


class SpecError(SkelviewError):
    """Invalid generation or corruption spec."""


class GeometryError(SkelviewError):
    """Invalid geometric argument (e.g. non-orthonormal rotation)."""


class ModelError(SkelviewError):
    """Shape or configuration mismatch in the model."""


class TrainingDiverged(SkelviewError):
    """Loss became non-finite during training."""


class RefusedOverwrite(SkelviewError):
    """Output directory already has content and --force was not given."""
