"""Simulation and analysis of qubit-based single-magnon detection."""

__version__ = "0.1.0"
