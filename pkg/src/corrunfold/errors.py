"""Exception types shared by the package."""


class ConfigError(ValueError):
    """Invalid parameters, dimensions or run configuration."""


class ContractViolation(ValueError):
    """An input broke a documented precondition (e.g. non-Hermitian matrix)."""


class NumericalError(RuntimeError):
    """A numerical routine failed to converge or drifted out of tolerance."""

    def __init__(self, message: str, method: str | None = None):
        super().__init__(message if method is None else f"[{method}] {message}")
        self.method = method
