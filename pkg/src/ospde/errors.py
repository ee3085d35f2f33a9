"""Exception types shared across the package."""


class ConfigurationError(ValueError):
    """Invalid grid/operator/problem configuration or mismatched objects."""


class AssumptionError(RuntimeError):
    """A structural assumption failed validation; the solver refuses to run."""


class SolverError(RuntimeError):
    """A linear solve or iterative scheme failed to converge."""
