"""Wavelength-adaptive 27-point finite-difference Helmholtz modelling in 3D.

Modules: ``dispersion`` (weights and phase-velocity analysis), ``model``
(velocity models, fields, file format), ``assembly`` (impedance matrix),
``linsolve`` (Krylov and direct solvers), ``reference`` (analytic and CBS
oracles), ``metrics`` (gain-weighted error) and ``cli``.
"""

__version__ = "0.1.0"
