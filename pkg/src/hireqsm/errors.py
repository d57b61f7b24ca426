"""Exception types raised across the toolkit."""


class QSMError(Exception):
    """Base class for all toolkit errors."""


class GridMismatch(QSMError, ValueError):
    pass


class SingularSymbol(QSMError, ZeroDivisionError):
    """A spectral division hit a zero of the symbol with no override."""


class PhaseWrapRisk(QSMError):
    """Simulated phase reached pi; unwrapping is not supported."""


class NoInterior(QSMError):
    """The ROI has no voxel with all six neighbours inside it."""


class MaxIterExceeded(QSMError):
    """An iterative solver ran out of iterations.

    The last iterate and its residual are kept on the exception so callers
    can decide whether the answer is usable anyway.
    """

    def __init__(self, message, iterate=None, residual=None):
        super().__init__(message)
        self.iterate = iterate
        self.residual = residual


class Diverged(QSMError, FloatingPointError):
    """A split Bregman iterate became non-finite."""

    def __init__(self, message, trace=None):
        super().__init__(message)
        self.trace = trace


class QvolError(QSMError, ValueError):
    pass


class BadMagic(QvolError):
    pass


class BadHeader(QvolError):
    pass


class TruncatedPayload(QvolError):
    pass
