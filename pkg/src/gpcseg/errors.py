"""Exception types shared across the package.

The CLI maps these onto exit codes: usage errors -> 1, data/format/config
errors -> 2, numerical failures -> 3.
"""


class GpcsegError(Exception):
    """Base class for all errors raised by this package."""


class ShapeError(GpcsegError, ValueError):
    """Tensor shapes are incompatible with the requested operation."""


class ConfigurationError(GpcsegError, ValueError):
    """An architecture / run configuration is invalid."""


class FormatError(GpcsegError, ValueError):
    """An on-disk artifact (case, checkpoint, NIfTI, config) is malformed."""


class ValidationError(GpcsegError, ValueError):
    """Data content violates an invariant (bad labels, empty modality, ...)."""


class AutodiffError(GpcsegError, RuntimeError):
    """Backward was requested on a tensor the tape knows nothing about."""


class NonFiniteError(GpcsegError, ArithmeticError):
    """A NaN or Inf appeared where the contract requires finite values."""


class EmptyStructureError(GpcsegError, ValueError):
    """A surface-distance metric was asked to measure an empty mask."""
