"""Exception types shared across the library."""


class SpeclipError(Exception):
    """Base class for all library-specific failures."""


class ZeroMatrixError(SpeclipError):
    """An operation that needs a defined singular subspace got the zero matrix."""


class ConvergenceFailure(SpeclipError):
    """An iterative routine hit its iteration cap without converging."""


class RangeViolation(SpeclipError):
    """A singular value left the monotone range of the capping polynomial."""


class NoSolutionError(SpeclipError):
    """The coupling solver found no feasible strength in the searched bracket."""


class ShapeMismatch(SpeclipError):
    """Input shapes are inconsistent with the model parameters."""


class VocabOverflow(SpeclipError):
    """A token id falls outside the embedding table."""


class DivergenceDetected(SpeclipError):
    """Training produced a non-finite loss or non-finite weights.

    Carries the partial run result (when available) as ``.result``.
    """

    def __init__(self, message, result=None):
        super().__init__(message)
        self.result = result


class CorruptCheckpoint(SpeclipError):
    """Checkpoint file is truncated or has bad magic/lengths."""


class VersionMismatch(SpeclipError):
    """Checkpoint format version differs from what this build writes."""
