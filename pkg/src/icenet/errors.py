"""Exception types shared across the package.

The CLI maps these onto process exit codes (config error -> 2, missing
artifact -> 3, numerical divergence -> 4).
"""


class IcenetError(Exception):
    """Base class for all package-specific errors."""


class ConfigurationError(IcenetError):
    """A config object or config file violates one of its invariants."""


class ShapeError(IcenetError):
    """Tensor arguments have inconsistent or unsupported shapes."""


class NumericError(IcenetError):
    """Non-finite values where finite ones are required."""


class DatasetFormatError(IcenetError):
    """A dataset or checkpoint file is malformed.

    Carries ``offset``, the byte offset at which the problem was detected.
    """

    def __init__(self, message, offset=None):
        if offset is not None:
            message = f"{message} (byte offset {offset})"
        super().__init__(message)
        self.offset = offset


class MissingArtifactError(IcenetError):
    """A referenced dataset/checkpoint path does not exist."""


class DivergenceError(IcenetError):
    """A fixed-point solve produced non-finite iterates.

    Carries the residual trace up to the failure and the last finite
    iterate (if any) so training-time handlers can fall back to it.
    """

    def __init__(self, message, residual_trace=None, last_finite=None):
        super().__init__(message)
        self.residual_trace = list(residual_trace) if residual_trace else []
        self.last_finite = last_finite
