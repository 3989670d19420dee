"""Lagrangian Euler-Poisson solver with a physical vacuum boundary on the periodic slab."""

__version__ = "0.1.0"
