"""Parametric multiscale linear elasticity: gpc Galerkin, mixed forms, homogenization."""
__version__ = "0.1.0"
