"""Casimir energies and forces by three routes.

``lifshitz``
    planar Lifshitz integrals, Matsubara sums and the 1d mode sum;
``fd_solver``
    finite-difference Green's functions (1d energy density, 2d stress tensor);
``scattering``
    partial-wave log-determinant energies and trace forces for cylinders and spheres.

All quantities use natural units hbar = c = 1 with lengths in micrometres;
``units`` converts to SI.
"""
__version__ = "0.1.0"

from .errors import (CasimirError, ConfigError, EvaluationError, NumericalError,  # noqa: F401
                     PerfectMetalError, TruncationError)
