"""Simulation and analysis tools for dissipative, kinetically constrained Rydberg gases."""

__version__ = "0.1.0"
