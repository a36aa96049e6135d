"""Simulation and analysis of polarization x energy-time hyperentangled photon
pairs sent through a free-space optical delay line."""

__version__ = "0.1.0"
