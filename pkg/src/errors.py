"""Exception types raised across the framework.

Every concrete error also derives from ``ValueError`` so callers that only
care about "bad input" can keep catching the builtin.
"""


class BamError(Exception):
    """Base class for framework errors."""


class ShapeError(BamError, ValueError):
    """Tensor or parameter shapes do not agree."""


class UnknownTaskError(BamError, ValueError):
    """A task id is not registered on the model, dataset suite or teacher."""


class TaskMismatchError(BamError, ValueError):
    """A checkpoint or dataset carries a different task list than expected."""


class CheckpointError(BamError, ValueError):
    """A checkpoint file is corrupt, truncated or of an unknown format."""


class DatasetFormatError(BamError, ValueError):
    """A dataset file could not be parsed."""

    def __init__(self, path, line_no: int | None, message: str):
        self.path = str(path)
        self.line_no = line_no
        where = f"{self.path}:{line_no}" if line_no is not None else self.path
        super().__init__(f"{where}: {message}")


class TeacherAssignmentError(BamError, ValueError):
    """Teachers are missing, or do not match the student they should teach."""


class DivergenceError(BamError, ValueError):
    """Training produced a non-finite loss."""


class InsufficientTrialsError(BamError, ValueError):
    """Too few trials for a significance test."""


class UnknownMethodError(BamError, ValueError):
    """A method name is not known to the registry or absent from results."""
