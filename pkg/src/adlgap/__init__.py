"""Spectral and stochastic tools for the low-temperature adaptive Langevin generator."""

__version__ = "0.1.0"
