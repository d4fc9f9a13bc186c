"""Numerical experiments around the hard-sphere and Boltzmann-Grad kinetic limit."""

__version__ = "0.1.0"
