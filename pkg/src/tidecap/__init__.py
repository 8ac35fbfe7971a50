"""Tidal capture in a hyperbolic encounter of two self-gravitating fluid balls.

Point-mass orbit, linear surface response in spherical harmonics, and the
energy budget that decides capture.  Modules:

``params``   physical inputs and dimensionless groups
``kepler``   closed-form hyperbola and scattering angle
``orbit``    orbit integration with point, ball and quadrupole force closures
``sphere``   spherical harmonics and the layer-potential multipliers
``tidal``    forced height modes (direct, Duhamel, derivative expansion)
``energy``   orbital/tidal energies, capture ratio, eta^6 fit
``cli``      the ``tidecap`` command
"""
__version__ = "0.1.0"

from .params import DomainError, PhysicalParams, derive, from_groups, from_mu  # noqa: F401
