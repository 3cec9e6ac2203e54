"""Numerical time-frequency toolkit for multilinear singular multipliers."""

__version__ = "0.1.0"
