"""Numerical laboratory for the two-equation (b, omega) turbulence model."""

__version__ = "0.1.0"
