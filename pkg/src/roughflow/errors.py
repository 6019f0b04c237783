"""Exception hierarchy.

Validation problems derive from ``ValueError`` so that ordinary callers can
catch them generically; numerical failures derive from ``NumericalFailure``.
The CLI maps the first group to exit code 1 and the second to exit code 2.
"""


class RoughFlowError(Exception):
    pass


class ShapeMismatchError(RoughFlowError, ValueError):
    pass


class NotLieElementError(RoughFlowError, ValueError):
    def __init__(self, residual, tolerance):
        self.residual = float(residual)
        self.tolerance = float(tolerance)
        super().__init__(
            f"not a Lie element: residual {self.residual:.3e} exceeds tolerance {self.tolerance:.3e}"
        )


class NonGeometricDriverError(RoughFlowError, ValueError):
    def __init__(self, message, residual=None, coefficients=None):
        self.residual = residual
        self.coefficients = coefficients
        super().__init__(message)


class NotFinelyDifferentiableError(RoughFlowError, TypeError):
    pass


class ConfigError(RoughFlowError, ValueError):
    pass


class NumericalFailure(RoughFlowError, ArithmeticError):
    pass


class FlowDivergenceError(NumericalFailure):
    def __init__(self, message, internal_time=None, step_index=None):
        self.internal_time = internal_time
        self.step_index = step_index
        super().__init__(message)


class NonConvergenceError(NumericalFailure):
    def __init__(self, message, diagnostics=None):
        self.diagnostics = diagnostics
        super().__init__(message)


class SewingError(NumericalFailure):
    pass
