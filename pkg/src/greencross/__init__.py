"""Compressed boundary-element operators on triangulated surfaces.

Builds hierarchical (nested low-rank) approximations of the Laplace
single-layer operator from a separable kernel expansion on box boundaries
combined with full-pivot cross interpolation, and solves the Dirichlet
boundary-value problem at desk scale.
"""

__version__ = "0.1.0"
