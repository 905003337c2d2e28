"""Finite element and spectral toolkit for the three-dimensional stochastic
Allen-Cahn equation with multiplicative noise: nested cube meshes, the P1
discrete operators, a truncated cylindrical noise driver, pathwise time
integration, and convergence/verification experiment drivers.
"""

from . import cli, fem, integrate, mesh, noise, quadrature, spectral, verify

__version__ = "0.1.0"

__all__ = [
    "cli", "fem", "integrate", "mesh", "noise", "quadrature", "spectral",
    "verify", "__version__",
]
