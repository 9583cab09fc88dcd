"""Exception types raised across the package."""


class NetsyncError(Exception):
    """Base class for errors raised by netsync."""


class GraphError(NetsyncError, ValueError):
    """Malformed graph or graph-dependent input."""


class DisconnectedGraphError(GraphError):
    """An operation needs a connected graph (non-singular reduced Laplacian)."""


class NoiseModelError(NetsyncError, ValueError):
    """Covariance or concentration parameters are invalid."""


class EstimationError(NetsyncError, ArithmeticError):
    """A numerical estimator could not produce a well-defined result."""
