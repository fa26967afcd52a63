class NumericalDomainError(ArithmeticError):
    """A quantity needed for quadrature is not finite where it must be."""


class SolverError(RuntimeError):
    """A linear or iterative solve failed to produce a usable answer."""

    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}


class LocalRadiusExceeded(SolverError):
    """The nonlocal iteration diverged; the initial datum is likely too large."""


class QuadratureFailure(NumericalDomainError):
    """A quadrature-based identity failed beyond its tolerance."""


class InvariantViolation(AssertionError):
    """A property the construction guarantees was found violated."""
