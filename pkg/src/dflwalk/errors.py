"""Exception types raised across the package."""


class DFLWalkError(Exception):
    """Base class for all package errors."""


class EdgeOverflow(DFLWalkError):
    """Nonzero amplitude would leave an open lattice (lattice too small)."""


class LengthMismatch(DFLWalkError, ValueError):
    pass


class NonPositiveProbability(DFLWalkError, ValueError):
    pass


class DegenerateWindow(DFLWalkError, ValueError):
    pass


class NonUnitaryInput(DFLWalkError, ValueError):
    pass


class BudgetExceeded(DFLWalkError):
    """Exhaustive enumeration requested beyond the configured size limit."""


class CenterMisplaced(DFLWalkError):
    """Bond gate requested while the orthogonality center is elsewhere."""


class BondDimOverflow(DFLWalkError):
    pass


class ParseError(DFLWalkError, ValueError):
    pass


class ValidationError(DFLWalkError, ValueError):
    pass
