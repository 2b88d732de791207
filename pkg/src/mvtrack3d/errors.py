"""Exception types shared across the toolkit."""


class MvTrackError(Exception):
    """Base class for all toolkit errors."""


class ValidationError(MvTrackError, ValueError):
    """Rejected input: an argument or file violates a documented invariant."""


class ParseError(ValidationError):
    """A data file failed to parse; carries the offending line number."""

    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class AdjustmentError(MvTrackError, ValueError):
    """A box adjustment produced a non-finite result."""


class NumericalError(MvTrackError, ArithmeticError):
    """A numerical operation failed (singular or indefinite matrix)."""


class InfeasibleMatrixError(MvTrackError, ValueError):
    """No feasible complete assignment exists for a cost matrix."""


class SequenceOrderError(MvTrackError, ValueError):
    """Frames were fed to a tracker out of timestamp order."""


class UndefinedMetricError(MvTrackError, ValueError):
    """A metric is undefined for the given input (e.g. no ground truth)."""


class UndefinedSimilarityError(MvTrackError, ValueError):
    """Cosine similarity is undefined for a zero vector."""
