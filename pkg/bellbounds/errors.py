"""Exception hierarchy shared by all bellbounds modules."""


class BellBoundsError(Exception):
    """Base class for every error raised deliberately by this package."""


class ShapeError(BellBoundsError, ValueError):
    """Tensor, strategy or matrix dimensions do not match the scenario."""


class DomainError(BellBoundsError, ValueError):
    """An argument lies outside the mathematical domain of an operation."""


class SizeError(BellBoundsError, ValueError):
    """A request exceeds an enumeration or storage cap."""


class InfeasibleError(BellBoundsError):
    """A geometric subproblem that must be solvable had no solution."""


class CertificateError(BellBoundsError):
    """A certificate could not be assembled or parsed."""
