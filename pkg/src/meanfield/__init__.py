"""Numerics for the sinh-Poisson type mean field equation on the flat torus."""

__version__ = "0.1.0"
