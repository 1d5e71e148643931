"""Exception hierarchy shared across the package.

The CLI maps these onto exit codes: ConfigError -> 2, DataError -> 3,
DivergenceError -> 4, anything else -> 1.
"""


class LatentVideoError(Exception):
    """Base class for all package errors."""


class ConfigError(LatentVideoError):
    """Invalid or inconsistent configuration (bad field, cross-field conflict)."""


class ShapeError(LatentVideoError, ValueError):
    """An array argument has the wrong shape, length, or value range."""


class DataError(LatentVideoError):
    """Missing or unreadable data: corpora, datasets, checkpoints, sequences."""


class CorpusError(DataError):
    """A glyph or background corpus is empty or unreadable."""


class IncompatibilityError(DataError):
    """Checkpoint and data/config shapes do not agree."""


class DivergenceError(LatentVideoError):
    """Training produced a non-finite loss component."""


class EvaluationError(LatentVideoError):
    """An evaluation cannot be computed (degenerate labels, zero denominator)."""
