"""Exception hierarchy shared by all modules."""


class DiracError(Exception):
    """Base class for library errors."""


class DomainError(DiracError, ValueError):
    """An argument lies outside the domain of an operation."""


class ConfigError(DiracError, ValueError):
    """Invalid or inconsistent configuration."""


class NumericalError(DiracError, RuntimeError):
    """A numerical procedure failed to reach its tolerance."""


class BoundaryZeroError(NumericalError):
    """A zero of the function lies on (or near) a search-box boundary."""


class GridMismatchError(DiracError, ValueError):
    """Two fields or operators live on different triangle grids."""
