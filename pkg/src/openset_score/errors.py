"""Exception types shared across the toolkit.

Every failure mode has its own class so callers (and the CLI exit-code
mapping) can distinguish bad input data from bad configuration.
"""


class OpenSetScoreError(Exception):
    """Base class for all toolkit errors."""


class NonFinite(OpenSetScoreError):
    """A vector or score contains NaN or infinity."""


class ZeroNorm(OpenSetScoreError):
    """A vector with (near-)zero Euclidean norm cannot be normalized."""


class DimensionMismatch(OpenSetScoreError):
    """Vectors of different dimensions were combined."""


class KTooLarge(OpenSetScoreError):
    """k exceeds the number of available media for a k-NN lookup."""


class ParseError(OpenSetScoreError):
    """A feature CSV could not be parsed; carries the 1-based line number."""

    def __init__(self, line: int, message: str):
        super().__init__(f"line {line}: {message}")
        self.line = line


class DuplicateMediaId(OpenSetScoreError):
    """The same (subject_id, media_id) pair appeared twice."""


class UnknownTruthSubject(OpenSetScoreError):
    """A probe's truth label names a subject that is not in the gallery."""


class DegenerateSample(OpenSetScoreError):
    """A statistic was requested from a sample that cannot support it."""


class DegenerateVariance(OpenSetScoreError):
    """A correlation was requested from a constant sample."""


class DomainError(OpenSetScoreError):
    """A closed-form expression was evaluated outside its domain."""


class ZeroSigma(OpenSetScoreError):
    """A score-statistics field that must be positive is zero or negative."""


class InsufficientSubjects(OpenSetScoreError):
    """Too few test subjects to build a non-mated split."""
