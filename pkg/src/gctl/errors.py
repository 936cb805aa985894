"""Exception hierarchy shared by all gctl modules.

CLI exit-code contract: configuration problems map to exit 2, solver
failures to exit 3, check-suite failures to exit 4.
"""


class GctlError(Exception):
    """Base class for all errors raised by this package."""


class ConfigError(GctlError):
    """Problem configuration is malformed (schema, dimensions, file I/O)."""


class DimensionError(GctlError):
    """Inputs have inconsistent shapes or dimensions."""


class NoNondegenerateComponent(ConfigError):
    """Every Brownian component has zero minimal variance rate.

    In this regime the admissible-control family collapses and the control
    problem is ill-posed, so loading such a configuration is refused.
    """


class ExprError(GctlError):
    """Base class for expression-language errors; carries a byte offset."""

    def __init__(self, message, offset):
        super().__init__(f"{message} (at offset {offset})")
        self.offset = offset


class ExprSyntaxError(ExprError):
    """Source text does not match the expression grammar."""


class UnknownIdentifier(ExprError):
    """Identifier is not t, a state variable, or a control variable in range."""


class ArityError(ExprError):
    """Function called with the wrong number of arguments."""


class DomainError(ExprError):
    """Evaluation hit an invalid operand (log of non-positive, divide by zero)."""


class NonDifferentiable(GctlError):
    """Symbolic derivative requested through a kink (abs, min, max, pos, neg)."""


class SolverError(GctlError):
    """Base class for numerical-solver failures."""


class CFLOverflow(SolverError):
    """Stability substepping would exceed the step budget (10^7 steps)."""


class MonotonicityUnavailable(SolverError):
    """2-D cross-derivative stencil needs diagonally dominant vertices."""


class DomainEscape(SolverError):
    """A quadrature point left the grid by more than the one-cell clamp margin."""


class NumericsError(SolverError):
    """NaN or overflow detected during stepping; carries the step index."""


class SimulationBlowup(SolverError):
    """NaN/overflow in simulated paths; carries path and step indices."""

    def __init__(self, message, path=None, step=None):
        super().__init__(message)
        self.path = path
        self.step = step
