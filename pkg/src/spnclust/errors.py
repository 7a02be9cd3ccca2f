"""Exception and warning types raised across the pipeline."""


class SpnClustError(Exception):
    """Base class for all package errors."""


class DegenerateResidual(SpnClustError, ValueError):
    """A noise residual has zero energy after row/column centering."""


class DimensionMismatch(SpnClustError, ValueError):
    pass


class NumericalFailure(SpnClustError, ArithmeticError):
    """Non-finite values or a failed factorization/eigendecomposition."""


class SingularFit(SpnClustError, ValueError):
    """The merge-regressor design matrix is rank deficient."""


class IdMismatch(SpnClustError, ValueError):
    pass


class EmptyOutput(SpnClustError, RuntimeError):
    """Nothing survived extraction (e.g. every image was dark)."""


class FormatError(SpnClustError, ValueError):
    """A file does not follow the expected on-disk layout."""


class CapacityExceeded(SpnClustError, ValueError):
    """Too many fingerprints for a single in-memory solve."""


class NotConverged(UserWarning):
    """ADMM stopped at ``max_iters`` before reaching the tolerance."""


class DegenerateGraph(UserWarning):
    """The affinity graph has no edges; every vertex is its own component."""
