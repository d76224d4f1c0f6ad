"""Exception hierarchy shared across the package."""


class BrainChannelError(Exception):
    """Base class for all errors raised by this package."""


class InvalidInputError(BrainChannelError):
    """Malformed or empty input data."""


class InvalidSpecError(BrainChannelError):
    """A configuration object violates its invariants (bad cutoffs, bad plan, ...)."""


class InsufficientDataError(BrainChannelError):
    """Recording too short for the requested segmentation."""


class AlignmentError(BrainChannelError):
    """Paired inputs disagree in length, count, or sample rate."""


class ShapeError(BrainChannelError):
    """Matrix dimensions do not conform."""


class InvalidEdgeError(BrainChannelError):
    """Edge list contains an out-of-range index or a self loop."""


class DegenerateInputError(BrainChannelError):
    """Input is degenerate beyond what regularized paths can absorb (e.g. all-zero X)."""


class ConfigError(BrainChannelError):
    """Invalid solver or run configuration."""


class NumericError(BrainChannelError):
    """Non-finite values or a failed factorization."""


class InvalidRecipeError(BrainChannelError):
    """Synthetic-data recipe violates its constraints."""
