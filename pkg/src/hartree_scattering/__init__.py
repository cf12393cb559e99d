"""Pseudospectral toolbox for the defocusing mass-subcritical Hartree NLS.

Layers, bottom up: spectral_core (grids, fields, Riesz multipliers),
functionals (norms and conserved quantities), propagator (split-step
evolution), scattering (the asymptotic-state and wave operators), hierarchy
(perturbation-series coefficients and the sequential Gronwall recursion),
experiments (two-parameter scaling studies), cli (batch entry point).
"""

__version__ = "0.1.0"
