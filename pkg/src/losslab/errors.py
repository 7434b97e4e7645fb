"""Exception types shared across the package.

Every error raised by losslab derives from LossLabError so callers can
catch the whole family at once.  Names follow the operation contracts.
"""


class LossLabError(Exception):
    """Base class for all losslab errors."""


class ZeroVector(LossLabError):
    """A row that must be normalizable has (near-)zero norm."""


class DimensionMismatch(LossLabError):
    """Operands disagree on the feature dimension."""


class EmptyInput(LossLabError):
    """An operation received an empty vector or batch."""


class InvalidMargin(LossLabError):
    """Angular margin outside [0, pi/2)."""


class InvalidEpsilon(LossLabError):
    """Unified scale factor epsilon outside (0, 0.5)."""


class NoPositives(LossLabError):
    """A pair-based loss got a batch with no positive pairs."""


class NoNegatives(LossLabError):
    """A pair-based loss got a batch with no negative pairs."""


class InvalidConfig(LossLabError):
    """A configuration value violates its domain."""


class InsufficientSamples(LossLabError):
    """Requested more samples/pairs than the dataset can supply."""


class NonFiniteLoss(LossLabError):
    """Training produced a NaN/inf loss; message carries the step index."""


class EmptyPairs(LossLabError):
    """Verification got an empty pair set."""


class OneClassOnly(LossLabError):
    """ROC is undefined: only one of {positive, negative} present."""


class PerturbationOutOfDomain(LossLabError):
    """A finite-difference probe left the loss's valid domain."""
