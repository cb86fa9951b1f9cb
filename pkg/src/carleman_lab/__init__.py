"""Numerical experiments for semiclassical resolvent estimates with bounded potentials.

Modules
-------
weights
    Problem constants and the auxiliary radial weights ``psi`` and ``w``.
carleman_weight
    The Carleman weight ``phi`` from a backward Riccati integration.
operator1d
    Finite-difference discretization and weighted resolvent norms.
analysis
    Carleman-inequality campaigns, resolvent sweeps and the gluing check.
resonances1d
    Resonances of piecewise-constant potentials via transfer matrices.
cli
    Config-driven entry point.
"""

__version__ = "0.1.0"
