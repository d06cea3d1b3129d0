"""Markovian embedding of the generalized Langevin equation with power-law memory."""

__version__ = "0.1.0"
