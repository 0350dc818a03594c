"""Exception types raised across the package."""


class DimensionError(ValueError):
    """Array shapes do not agree with the model they are used against."""


class InputError(ValueError):
    """A numeric input is out of its admissible range (NaN, bad probability, ...)."""


class NonConvergenceError(RuntimeError):
    """An iterative routine hit its iteration cap before reaching tolerance."""

    def __init__(self, message, cap=None, residual=None):
        super().__init__(message)
        self.cap = cap
        self.residual = residual


class MixingError(RuntimeError):
    """The chain is not ergodic, so no finite mixing constant exists."""


class SizeGuardError(RuntimeError):
    """A dense routine refused an instance above its size guard."""


class ContractViolation(RuntimeError):
    """A sampled index has zero probability mass, or a declared bound is broken."""
