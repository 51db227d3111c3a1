"""Thermal quench dynamics of the mixed-field Ising chain from weighted pure-state dynamics."""

__version__ = "0.1.0"
