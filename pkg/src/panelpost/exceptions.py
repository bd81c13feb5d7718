"""Exception types shared across the package.

The CLI maps ``PanelDataError`` to exit code 2 and ``NumericalError``
subclasses to exit code 3.
"""


class PanelDataError(ValueError):
    """Malformed or unbalanced panel input."""


class NumericalError(RuntimeError):
    """Base class for failures of an estimation step."""


class DegenerateColumnError(NumericalError):
    """A nodewise target column is (numerically) in the span of the others."""


class DegenerateVarianceError(NumericalError):
    """A variance estimate came out nonpositive."""


class IdentificationError(NumericalError):
    """A regressor is collinear with the absorbed fixed effects."""


class SimulationError(NumericalError):
    """Too many Monte Carlo replications failed."""
