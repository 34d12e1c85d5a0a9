"""
Exception hierarchy for asdkit.

Every error raised on purpose by the library derives from AsdError, so the
command line can map it to an exit code in one place.
"""


class AsdError(Exception):
    """Base class for all asdkit errors."""


class ConfigError(AsdError):
    """Invalid experiment configuration (unknown key, bad value, bad syntax)."""

    def __init__(self, message, line=None, column=None):
        if line is not None:
            message = f"{message} (line {line}, column {column})"
        super().__init__(message)
        self.line = line
        self.column = column


# graph

class InvalidDistribution(AsdError, ValueError):
    """A probability table does not sum to one or has negative entries."""


class UnbalancedStatistics(AsdError, ValueError):
    """In- and out-stub counts of a label pair disagree beyond the repair budget."""


class InvalidSpec(AsdError, ValueError):
    """Generator parameters outside their admissible range."""


class ParseError(AsdError):
    """Malformed line in an edge-list, label-map or state file."""

    def __init__(self, message, line=None, path=None):
        where = ""
        if path is not None:
            where += f"{path}:"
        if line is not None:
            where += f"{line}:"
        super().__init__(f"{where} {message}" if where else message)
        self.line = line
        self.path = path


# dynamics

class StateMismatch(AsdError, ValueError):
    """A kernel was attached to a state set it does not understand."""


class InvalidPayoff(AsdError, ValueError):
    """ERG payoffs violate c > b >= 0."""


class MalformedRow(AsdError, ValueError):
    """A table-kernel row is not a probability vector."""


# simulate

class StateSpaceTooLarge(AsdError):
    """The exact oracle was asked for more than 2**20 configurations."""


# meanfield

class BudgetExceeded(AsdError):
    """Exact enumeration forced beyond the composition budget."""


class StepTooLarge(AsdError):
    """RK4 steps left the simplex too often; reduce the step size."""


class NoConvergence(AsdError):
    """A stationary-point search did not converge from a seed."""

    def __init__(self, seed, residual):
        super().__init__(f"no convergence from seed {list(seed)} (residual {residual:.3g})")
        self.seed = seed
        self.residual = residual


# bounds

class TreeBudgetExceeded(AsdError):
    """Branching tree grew past its node budget; carries the partial tree."""

    def __init__(self, message, partial=None):
        super().__init__(message)
        self.partial = partial


class InvalidStep(AsdError, ValueError):
    """Discretisation step too large for the Lipschitz constant."""


# cli

class GridMismatch(AsdError):
    """Time grids of two series cannot be aligned by interpolation."""
