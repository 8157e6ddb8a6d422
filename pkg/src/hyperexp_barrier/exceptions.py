"""Exception types shared across the package."""


class ModelError(ValueError):
    """Raised when a model violates one of its invariants."""

    def __init__(self, violations):
        if isinstance(violations, str):
            violations = [violations]
        self.violations = list(violations)
        super().__init__("; ".join(self.violations))


class DomainError(ValueError):
    """Raised when an argument lies outside the domain of an operation."""


class NumericalFailure(ArithmeticError):
    """Raised when a numerical routine cannot meet its own accuracy checks."""


class InversionError(NumericalFailure):
    """Raised when a transform returns non-finite values at an inversion node."""
