"""Bayesian scalar-on-function regression with instrumental-variable
measurement error correction."""

__version__ = "0.1.0"
