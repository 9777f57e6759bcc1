"""Exception types shared across the package."""


class ValidationError(ValueError):
    """Input violates a documented precondition or invariant."""


class AlignmentError(ValidationError):
    """A character span does not line up with token boundaries."""


class CoverageError(ValidationError):
    """An event annotation names roles with no matching schema instance."""


class ShapeError(ValueError):
    """Tensor operands have incompatible shapes."""


class CheckpointError(ValueError):
    """A checkpoint file is malformed or incompatible."""


class TrainingDiverged(RuntimeError):
    """Training produced a non-finite loss; carries diagnostic context."""
