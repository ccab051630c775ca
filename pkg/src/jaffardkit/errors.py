"""Exception hierarchy shared by all jaffardkit modules."""


class JaffardKitError(Exception):
    """Base class for all toolkit errors."""


class ParameterError(JaffardKitError, ValueError):
    pass


class ShapeError(JaffardKitError, ValueError):
    pass


class FitError(JaffardKitError):
    pass


class ConvergenceError(JaffardKitError, ArithmeticError):
    """Iterative method did not reach its tolerance.

    ``last_iterate`` and ``last_residual`` carry diagnostics from the final step.
    """

    def __init__(self, message, last_iterate=None, last_residual=None):
        super().__init__(message)
        self.last_iterate = last_iterate
        self.last_residual = last_residual


class ContractionError(JaffardKitError, ArithmeticError):
    pass


class SingularityError(JaffardKitError, ArithmeticError):
    def __init__(self, message, pivots=None):
        super().__init__(message)
        self.pivots = pivots


class NumericError(JaffardKitError, ArithmeticError):
    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}
