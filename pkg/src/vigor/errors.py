"""Exception types shared across the package.

Each error names the contract it enforces; callers that want to recover
(e.g. the dataset generator retrying a degenerate scene) catch the
specific type rather than a bare Exception.
"""


class VigorError(Exception):
    """Base class for all package errors."""


class ShapeError(VigorError, ValueError):
    """Operands have incompatible or malformed shapes."""


class NumericError(VigorError, ArithmeticError):
    """Non-finite values where finite ones are required."""


class ContractError(VigorError, ValueError):
    """A documented precondition was violated by the caller."""


class NotFoundError(VigorError, LookupError):
    """A lookup (class name, proposal id, ...) matched nothing."""


class GenerationError(VigorError, RuntimeError):
    """The scene sampler exhausted its rejection budget."""


class SkipSample(VigorError):
    """The drawn scene cannot support the requested sample; retry."""


class AmbiguityError(VigorError, RuntimeError):
    """A relation chain has no unique solution (distance tie)."""


class EmptyOrderError(VigorError, ValueError):
    """A description mentions no known class name."""


class OrderParseError(VigorError, ValueError):
    """A language-model reply did not follow the expected format."""

    def __init__(self, message: str, raw_response: str | None = None):
        super().__init__(message)
        self.raw_response = raw_response


class EndpointError(VigorError, RuntimeError):
    """The language-model endpoint failed after all retries."""


class CheckpointError(VigorError, RuntimeError):
    """A checkpoint file is unreadable, truncated, or incompatible."""


class ValidationError(VigorError, ValueError):
    """A dataset record violates the file-format contract."""
