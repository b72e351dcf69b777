"""Exception hierarchy shared across the package."""


class LeplumeError(Exception):
    """Base class for all package errors."""


class HandleError(LeplumeError, KeyError):
    """An entity handle does not exist (or was tombstoned)."""

    def __str__(self):
        return str(self.args[0]) if self.args else "unknown handle"


class GeometryError(LeplumeError, ValueError):
    """Degenerate or otherwise invalid geometry."""


class PreconditionError(LeplumeError):
    """A production was applied although its predicate does not hold."""


class NonTerminationError(LeplumeError):
    """Refinement did not reach a fixpoint within the pass budget."""

    def __init__(self, message, broken_edges=(), broken_faces=()):
        super().__init__(message)
        self.broken_edges = list(broken_edges)
        self.broken_faces = list(broken_faces)


class FormatError(LeplumeError, ValueError):
    """Malformed input file (heightmap, mesh)."""


class ConfigError(LeplumeError, ValueError):
    """Invalid scenario configuration; ``field`` names the offending key."""

    def __init__(self, message, field=None):
        super().__init__(message)
        self.field = field


class ConvergenceError(LeplumeError):
    """Iterative solver failed to reach the requested tolerance."""

    def __init__(self, message, x=None, residuals=()):
        super().__init__(message)
        self.x = x
        self.residuals = list(residuals)
