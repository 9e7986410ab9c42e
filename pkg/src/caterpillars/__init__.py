"""Simulation and verification of r-caterpillar counts in Lambda-coalescents."""

__version__ = "0.1.0"
