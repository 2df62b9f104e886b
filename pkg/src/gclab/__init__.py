"""Numerical laboratory for Gauss-Codazzi blow-up on hyperbolic surfaces.

Modules: ``hyperelliptic`` (algebraic curves and Q(D)), ``sigma`` (mass
patterns), ``fuchsian`` (Bolza mesh), ``dolbeault`` (discrete Hodge theory),
``donaldson`` (energy minimization and continuation), ``blowup``
(diagnostics) and ``cli``.
"""

__version__ = "0.1.0"
