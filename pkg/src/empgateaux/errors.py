"""Exception hierarchy; the CLI maps each class to an exit code."""


class GateauxError(Exception):
    """Base class for library errors."""


class InvalidParameter(GateauxError, ValueError):
    """A numeric parameter is outside its domain (eps, bandwidth, ...)."""


class InvalidInput(GateauxError, ValueError):
    """Unreadable, empty or malformed data."""


class LayoutError(InvalidInput):
    """Coordinate layouts of a point and a distribution disagree."""


class DegenerateError(GateauxError, ArithmeticError):
    """A regime, arm or support cell carries zero probability."""


class SupportError(DegenerateError):
    """An observation falls outside the estimated support."""


class NumericFailure(GateauxError, ArithmeticError):
    """Too many per-observation evaluations failed."""


class InfeasibleError(GateauxError):
    """The linear program has no feasible point."""


class UnboundedError(GateauxError):
    """The linear program objective is unbounded."""
