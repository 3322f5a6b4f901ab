"""Exception types shared across the package."""


class PompgError(Exception):
    """Base class for all package errors."""


class ParameterError(PompgError, ValueError):
    """A user-supplied parameter violates its documented range or shape."""


class ContractError(PompgError):
    """An internal call contract was violated (stale stamps, mismatched inputs)."""


class SizeError(PompgError):
    """An enumeration would exceed its configured cap."""

    def __init__(self, message: str, required: int | None = None, cap: int | None = None):
        super().__init__(message)
        self.required = required
        self.cap = cap


class ModelLoadError(PompgError):
    """A model file failed schema or stochasticity validation."""


class SolverError(PompgError):
    """A linear solve or fixed-point iteration failed to reach its residual."""

    def __init__(self, message: str, residual: float | None = None):
        super().__init__(message)
        self.residual = residual
