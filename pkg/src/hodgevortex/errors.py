"""Exception hierarchy shared by every module."""

from __future__ import annotations


class HodgeVortexError(Exception):
    """Base class for all package errors."""


class ConfigError(HodgeVortexError, ValueError):
    """Invalid or incomplete user configuration."""

    def __init__(self, message: str, key: str | None = None):
        super().__init__(message)
        self.key = key


class NumericalError(HodgeVortexError, ArithmeticError):
    """Base class for failures of a numerical procedure."""


class DegenerateLattice(ConfigError):
    """Lattice generators are (nearly) linearly dependent or zero."""


class DetNotOne(ConfigError):
    """Lattice determinant differs from one and rescaling was not requested."""


class NonPositiveDensity(NumericalError):
    """The conformal factor is not strictly positive."""


class CoincidentPoints(NumericalError):
    """Green function requested on the diagonal."""


class ToleranceNotReached(NumericalError):
    """A truncated series could not certify the requested accuracy."""


class QuadratureFailure(NumericalError):
    """A contour passes too close to a singularity."""


class CollisionError(NumericalError):
    """Two vortices came closer than the collision threshold."""


class StepUnderflow(NumericalError):
    """Adaptive step size fell below the admissible minimum."""


class CurveTooCloseToVortex(NumericalError):
    """A circulation contour passes too close to a vortex."""


class OutsideDomain(NumericalError):
    """A point lies outside the domain of a planar Green function."""


class SeriesNotConverged(NumericalError):
    """An image series did not converge within the term budget."""


class NoCrossings(NumericalError):
    """An orbit never crossed the Poincaré section."""


class NewtonDiverged(NumericalError):
    """Newton iteration failed to converge from a seed."""


class NoIsolatedEquilibria(NumericalError):
    """The Robin function is constant, so equilibria are not isolated."""


class PairDissociated(NumericalError):
    """A vortex dipole separated beyond the admissible distance."""
