"""Exception hierarchy shared by all qoc modules."""


class QocError(Exception):
    """Base class for every error raised by this package."""


class NonHermitian(QocError, ValueError):
    pass


class ConvergenceFailure(QocError, ArithmeticError):
    pass


class DimMismatch(QocError, ValueError):
    pass


class NonFinite(QocError, ArithmeticError):
    pass


class OutOfRange(QocError, ValueError):
    pass


class BadIndex(QocError, IndexError):
    pass


class BadGrid(QocError, ValueError):
    pass


class StepUnderflow(QocError, ArithmeticError):
    """Adaptive integrator could not meet its tolerance."""


class CacheMismatch(QocError, ValueError):
    """Forward and backward caches were not produced by the same evolution."""


class LineSearchFailure(QocError, ArithmeticError):
    pass


class MaxIter(QocError, RuntimeError):
    pass


class SingularJacobian(QocError, ArithmeticError):
    pass


class BadProbability(QocError, ValueError):
    pass


class ZeroAnharmonicity(QocError, ValueError):
    pass


class ConfigError(QocError, ValueError):
    pass
