"""Exception types raised across the package."""


class TilescopeError(Exception):
    """Base class for all package errors."""


class RootAverageExceedsLevel(TilescopeError):
    """The average of |f| over the whole torus is above the stopping level."""


class NotOnGamma(TilescopeError):
    """A frequency point does not lie on the hyperplane xi_1 + ... + xi_n = 0."""


class SearchExhausted(TilescopeError):
    """No covering shifted dyadic cube was found in the searched scales."""


class EmptyWindow(TilescopeError):
    pass


class UnknownSymbol(TilescopeError):
    pass


class UncoveredPoint(TilescopeError):
    """A point is not covered by the supports of the supplied cubes."""


class BandLimitViolated(TilescopeError):
    pass


class GridMismatch(TilescopeError):
    pass


class NotTensorFactorizable(TilescopeError):
    pass


class IndexMismatch(TilescopeError):
    """Two tiles with different tile indices were compared."""


class RefinementViolated(TilescopeError):
    """A tile collection fails the refinement preconditions of tree selection."""


class EmptySet(TilescopeError):
    pass


class NoMajorizingC(TilescopeError):
    """No exceptional-set constant in the search range yields a major subset."""


class RegionViolation(TilescopeError):
    """An exponent tuple lies outside the admissible region for the experiment."""
