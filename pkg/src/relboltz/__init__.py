"""Relativistic kinetic simulation and light-observation probing on product spacetimes."""
__version__ = "0.1.0"
