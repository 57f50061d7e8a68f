"""Exception types and warning categories used across the package."""


class SageSfmError(Exception):
    """Base class for all library errors."""


class InvalidDimension(SageSfmError):
    """A dimension constraint was violated (e.g. fewer rows than rank)."""


class EmptyColumn(SageSfmError):
    """A column with no observed entries where at least one is required."""


class EmptyObservation(SageSfmError):
    """An operation received an empty observation set."""


class ColumnSkipped(SageSfmError):
    """Column has too few observed entries to be processed now."""


class NumericalFault(SageSfmError):
    """Non-finite values were produced or consumed."""


class StreamError(SageSfmError):
    """A frame stream referenced tracks inconsistently."""


class DegenerateMatrix(SageSfmError):
    """No column of the measurement matrix is processable."""


class OcclusionInfeasible(SageSfmError):
    """Requested occlusion level cannot keep every column observable."""


class WrongRank(SageSfmError):
    """Operation requires a specific rank or number of frames."""


class DegenerateAlignment(SageSfmError):
    """Point set too degenerate to align (all points collinear)."""


class ParseError(SageSfmError):
    """Malformed input file; message carries the offending line number."""


class DuplicateEntry(SageSfmError):
    """The same (row, col) entry appeared twice in a matrix file."""


class DowndateDegenerate(RuntimeWarning):
    """SVD downdate produced a non-positive singular value that was clamped."""


class MetricDegenerate(RuntimeWarning):
    """Metric-upgrade Gram matrix was not positive definite and was projected."""
