"""Exception types shared across the package."""


class StructureError(ValueError):
    """Malformed coupling structure (graph, selectors, dimensions)."""


class DomainError(ValueError):
    """Evaluation requested outside the domain of a barrier or model."""


class SolverError(RuntimeError):
    """An iterative solve could not complete.

    The partial result (iteration log, best iterate) is attached as
    ``result`` when available.
    """

    def __init__(self, message, result=None):
        super().__init__(message)
        self.result = result


class ConfigError(ValueError):
    """Invalid run configuration or problem description."""
