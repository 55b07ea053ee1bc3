class ContractError(ValueError):
    """Raised when an argument violates a documented precondition."""


class DescentNotFound(RuntimeError):
    """No predicted Lyapunov value beat the current one within tolerance."""

    def __init__(self, message: str, best_margin: float):
        super().__init__(message)
        self.best_margin = best_margin


class InvalidStart(ValueError):
    """Objective or constraints are not finite at the initial guess."""


class NonFiniteSample(FloatingPointError):
    def __init__(self, component: int, value: float):
        super().__init__(f"non-finite function value {value!r} while differencing component {component}")
        self.component = component


class RunAborted(RuntimeError):
    """A closed-loop run stopped early; ``trace`` holds everything recorded so far."""

    def __init__(self, message: str, trace=None, instance=None):
        super().__init__(message)
        self.trace = trace
        self.instance = instance
