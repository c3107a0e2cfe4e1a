"""Exception types shared across the package."""


class CrossoverError(Exception):
    """Base class for all package-specific errors."""


class HorizonError(CrossoverError, ValueError):
    """Requested horizon outside the enumerable range."""


class EnumerationSizeError(CrossoverError, ValueError):
    """Exact enumeration of assignments would exceed the size cap."""


class MissingSequenceError(CrossoverError, ValueError):
    """A required treatment-sequence group is empty or absent."""


class DegenerateCovarianceError(CrossoverError, ValueError):
    """A covariance estimate is requested from too few units."""


class NotIdentifiableError(CrossoverError, ValueError):
    """The rank condition for unbiased estimation fails.

    Carries the numerical rank and the dimension of the coefficient
    space so callers can report the deficiency.
    """

    def __init__(self, rank: int, dimension: int, message: str | None = None):
        self.rank = int(rank)
        self.dimension = int(dimension)
        if message is None:
            message = (
                f"rank condition fails: rank {self.rank} < dimension "
                f"{self.dimension}; some mean parameters are not estimable"
            )
        super().__init__(message)


class ConditioningError(CrossoverError, RuntimeError):
    """A linear system is numerically singular after repair."""
