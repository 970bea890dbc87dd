"""Numerical laboratory for kinetic Kolmogorov equations and SDEs with distributional drift."""

__version__ = "0.1.0"
