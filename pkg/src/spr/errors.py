class SPRError(Exception):
    """Base class for contract violations raised by this package."""


class ShapeError(SPRError, ValueError):
    pass


class ContractError(SPRError, ValueError):
    """A precondition on a hyperparameter or input was violated."""


class DivergenceError(SPRError, FloatingPointError):
    """Training produced a non-finite loss."""
