"""Pseudospectral toolkit for the fractional NLS energy with periodic potentials."""

__version__ = "0.1.0"
