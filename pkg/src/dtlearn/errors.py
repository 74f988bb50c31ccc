"""Exception types shared across the package."""


class DtlearnError(Exception):
    """Base class for all package errors."""


class DomainError(DtlearnError, ValueError):
    """A value lies outside the domain of a model or operation."""

    def __init__(self, symbol, message=None):
        self.symbol = symbol
        super().__init__(message or f"invalid value for {symbol!r}")


class DivergenceError(DtlearnError, ArithmeticError):
    """Integration or training produced non-finite or exploding values."""

    def __init__(self, message, *, time=None, epoch=None, last_finite_loss=None):
        self.time = time
        self.epoch = epoch
        self.last_finite_loss = last_finite_loss
        super().__init__(message)


class StructuralError(DtlearnError, ValueError):
    """Array shapes or containers do not fit together."""
