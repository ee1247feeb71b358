"""Exception hierarchy shared by every solver in the package."""


class SemirteError(Exception):
    """Base class; ``stage`` is filled in by the CLI harness when re-raising."""

    stage = None


class DomainError(SemirteError, ValueError):
    """A point or segment lies outside the computational domain."""


class ModelError(SemirteError, ValueError):
    """A coefficient model violates its structural invariants."""


class DataError(SemirteError, ValueError):
    """Measured or synthetic data are inconsistent with the model assumptions."""


class UnsupportedParameterError(SemirteError, ValueError):
    """A parameter value lies outside the supported theory (e.g. q < 1)."""


class ValidationError(SemirteError, ValueError):
    """An experiment specification failed schema or invariant validation."""

    def __init__(self, diagnostics):
        if isinstance(diagnostics, str):
            diagnostics = [diagnostics]
        self.diagnostics = list(diagnostics)
        super().__init__("; ".join(self.diagnostics))


class IterationError(SemirteError, RuntimeError):
    """An iterative solver did not converge; carries its residual trace."""

    def __init__(self, message, residuals=()):
        self.residuals = list(residuals)
        last = f" (last residual {self.residuals[-1]:.3e})" if self.residuals else ""
        super().__init__(message + last)


class NumericalIntegrityError(SemirteError, ArithmeticError):
    """A converged solution violates a bound that the theory guarantees."""
