"""Exception hierarchy shared by every qbnwalk module."""


class QBNWalkError(Exception):
    """Base class for all errors raised by qbnwalk."""


class ModeBudgetError(QBNWalkError, ValueError):
    """A mode index or a required number of modes exceeds the ModeBudget."""


class DimensionMismatchError(QBNWalkError, ValueError):
    """Operands live on spaces of different dimension (or lattice rank)."""


class CursorMismatchError(QBNWalkError, ValueError):
    """A step was requested out of order; modes must be consumed 0, 1, 2, ..."""


class PositivityError(QBNWalkError, ArithmeticError):
    """A site operator drifted below the positivity floor."""


class EngineSpecMismatchError(QBNWalkError, ValueError):
    """The chosen engine cannot evolve the given initial state."""


class SupportBoundaryError(QBNWalkError, ValueError):
    """A nucleus reaches the edge of a finite lattice window."""


class WindowTooSmallError(QBNWalkError, ValueError):
    """A lattice window is too narrow to host any interior site."""


class SpecParseError(QBNWalkError, ValueError):
    """An initial-state string or a config entry could not be parsed."""

    def __init__(self, message, key=None):
        super().__init__(message if key is None else f"{key}: {message}")
        self.key = key
