"""Exception types raised by envdim."""


class EnvelopeError(Exception):
    """Base class for errors raised by envdim."""


class NumericalError(EnvelopeError):
    """A numerical failure: singular matrices, separation, divergence."""


class SingularMatrixError(NumericalError):
    pass


class SeparationError(NumericalError):
    """Logistic coefficients diverge because the classes are separable."""


class ConvergenceError(NumericalError):
    pass
