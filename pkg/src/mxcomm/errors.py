"""Exception types shared across the package."""


class MxcommError(Exception):
    """Base class for every error raised by this package."""


class NonFiniteInput(MxcommError):
    """Input contains NaN or Inf; quantizing it would hide an upstream failure."""

    def __init__(self, message: str, block_index: int | None = None):
        super().__init__(message)
        self.block_index = block_index


class MalformedCode(MxcommError):
    """An element code is outside the format's code space."""


class MalformedHeader(MxcommError):
    """A container header is structurally invalid."""


class BadMagic(MalformedHeader):
    """The container does not start with the expected magic bytes."""


class UnsupportedVersion(MalformedHeader):
    """The container version is not one this implementation understands."""


class TruncatedStream(MxcommError):
    """The byte stream ends before the declared payload does."""


class UnknownScheme(MxcommError):
    """A format or scheme name is not in the registry."""


class ShapeMismatch(MxcommError):
    """Tensor shapes are inconsistent with the requested operation."""


class CompressionFactorTooHigh(MxcommError):
    """The requested compression factor leaves no room for even one value."""


class MinimumDegreeTwo(MxcommError):
    """Simulated tensor parallelism needs at least two workers."""


class EmptyGrid(MxcommError):
    """A candidate grid with no entries cannot be searched."""


class EvaluatorFailure(MxcommError):
    """A quality evaluator raised while scoring a candidate scheme."""

    def __init__(self, message: str, candidate=None):
        super().__init__(message)
        self.candidate = candidate


class TransportFailure(MxcommError):
    """A benchmark worker failed to exchange data with a peer."""


class ResultMismatch(MxcommError):
    """Benchmark workers disagree on the reduced tensor."""
