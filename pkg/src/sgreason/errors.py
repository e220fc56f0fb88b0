"""Exception types shared across the package."""


class SgError(Exception):
    """Base class for all package errors."""


class InvalidBoxError(SgError):
    """A bounding box violates its geometric invariants."""


class VocabularyError(SgError):
    """Vocabulary contents are inconsistent or a name lookup failed."""


class ProgramSyntaxError(SgError):
    """Program text could not be parsed."""

    def __init__(self, message, position=None):
        if position is not None:
            message = f"{message} (at {position})"
        super().__init__(message)
        self.position = position


class ProgramValidationError(SgError):
    """A program violates the operator/arity/dependency rules."""

    def __init__(self, violations):
        self.violations = list(violations)
        super().__init__("; ".join(str(v) for v in self.violations))


class ExecutionError(SgError):
    """Generic failure while executing a program step."""


class UnanswerableError(ExecutionError):
    """A terminal operation was applied to an empty referred set."""


class AmbiguousError(ExecutionError):
    """A choose operation held for both or neither candidate."""


class TrainingDivergedError(SgError):
    """The training loss became non-finite."""
