"""Numerical very weak solutions of 2x2 hyperbolic systems with singular coefficients."""

__version__ = "0.1.0"
