"""Exception hierarchy shared by every module."""


class ModalSimError(Exception):
    """Base class for all library errors."""


class ValidationError(ModalSimError, ValueError):
    """An input violates a documented precondition."""


class NotNormalizedError(ValidationError):
    pass


class NotHermitianError(ValidationError):
    pass


class NotUnitaryError(ValidationError):
    pass


class NumericalError(ModalSimError, ArithmeticError):
    """A computation cannot proceed for numerical reasons (CLI exit code 3)."""


class GramIndefiniteError(NumericalError):
    def __init__(self, eigenvalue: float, message: str | None = None):
        self.eigenvalue = eigenvalue
        super().__init__(
            message or f"Gram matrix is indefinite: smallest eigenvalue {eigenvalue:.3e}"
        )


class DegenerateSpectrumError(NumericalError):
    pass


class InfeasibleStepError(NumericalError):
    def __init__(self, message: str, diagonal=None, clamped_mass: float = 0.0):
        self.diagonal = diagonal
        self.clamped_mass = clamped_mass
        super().__init__(message)


class ConfigError(ModalSimError):
    """Configuration problems; carries every violation found, not just the first."""

    def __init__(self, violations):
        if isinstance(violations, str):
            violations = [violations]
        self.violations = list(violations)
        super().__init__("; ".join(self.violations))
