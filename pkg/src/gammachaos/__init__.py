"""Gamma approximation of Poisson functionals: contraction algebra, Stein
bounds and a Monte Carlo harness."""

__version__ = "0.1.0"
