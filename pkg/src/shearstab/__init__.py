"""Spectral stability toolkit for monotone shear flows on the half-line.

Layers:

* :mod:`shearstab.profiles` -- background flows and spectral parameters,
* :mod:`shearstab.odecore` -- meshes, quadrature, ODE integration, winding,
* :mod:`shearstab.rayleigh` -- the inviscid operator, its adjoint, Green
  functions and eigenvalue machinery,
* :mod:`shearstab.orrsommerfeld` -- the viscous operator: fast/slow
  expansions, Evans functions, eigenvalue tracking,
* :mod:`shearstab.viscgreen` -- viscous Green functions with boundary
  corrections,
* :mod:`shearstab.cli` -- the ``shearstab`` command line tool.
"""

from .profiles import ShearProfile, SpectralParams, make_profile, validate_assumptions

__version__ = "0.1.0"

__all__ = [
    "ShearProfile",
    "SpectralParams",
    "make_profile",
    "validate_assumptions",
    "__version__",
]
