"""Exception types shared across the package."""


class GwkitError(Exception):
    """Base class for every error raised by gwkit."""


class InputError(GwkitError, ValueError):
    """Invalid user input: missing or malformed files, bad values, bad shapes."""


class DimensionMismatchError(InputError):
    """Operands that must share dimensions do not."""


class NumericalError(GwkitError, ArithmeticError):
    """A solver failed for numerical reasons rather than bad input."""


class KernelUnderflowError(NumericalError):
    """A scaling update hit a zero denominator because the Gibbs kernel
    underflowed; rerun with the log-domain solver."""


class StageError(GwkitError):
    """A pipeline stage failed; carries the stage name for attribution."""

    def __init__(self, stage, cause):
        super().__init__(f"stage '{stage}' failed: {cause}")
        self.stage = stage
        self.cause = cause
