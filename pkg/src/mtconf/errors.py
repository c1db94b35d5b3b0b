"""Exception hierarchy shared across the toolkit.

Every error a caller is expected to handle derives from MtconfError, so the
CLI can map exception classes onto exit codes.
"""


class MtconfError(Exception):
    """Base class for all toolkit errors."""


class ConfigurationError(MtconfError):
    """Invalid build/runtime configuration (bad dims, empty corpus, missing path)."""


class ValidationError(MtconfError):
    """Invalid input data for an operation (bad token ids, shape mismatch)."""


class DataError(MtconfError):
    """Malformed external data (corpus files, caches, alignment files)."""


class NumericalError(MtconfError):
    """Non-finite values where finite ones are required (NaN loss, inf gradient)."""


class MetricsError(MtconfError):
    """Evaluation cannot proceed (single-class labels, empty join)."""
