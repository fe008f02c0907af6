"""Exception types shared across the package."""


class GenRestoreError(Exception):
    """Base class for all package errors."""


class DimensionMismatch(GenRestoreError, ValueError):
    pass


class NotSpd(GenRestoreError, ArithmeticError):
    """Cholesky failed even after diagonal jitter escalation."""


class DegenerateFamily(GenRestoreError, ArithmeticError):
    """The least-squares profiling of transform coefficients broke down."""


class ZeroResidual(GenRestoreError, ArithmeticError):
    """Observation lies (numerically) on the generator manifold.

    The log objective is unbounded below there. Callers that want to keep
    going pass ``clamp=True`` to the objective instead.
    """

    def __init__(self, residual_sq):
        super().__init__(f"residual energy {residual_sq:.3e} below 1e-300")
        self.residual_sq = residual_sq


class NonFiniteGradient(GenRestoreError, ArithmeticError):
    pass


class BadKernelLength(GenRestoreError, ValueError):
    pass


class MalformedFile(GenRestoreError, ValueError):
    def __init__(self, message, offset=None):
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)
        self.offset = offset


class VersionMismatch(GenRestoreError, ValueError):
    pass


class AllWeightsZero(GenRestoreError, ArithmeticError):
    pass


class ConfigError(GenRestoreError, ValueError):
    pass
