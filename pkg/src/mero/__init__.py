"""Stochastic approximation solvers for minimax excess risk optimization."""

__version__ = "0.1.0"
