"""Desk-scale QSM: simulation, LBV background removal and HIRE dipole inversion."""
__version__ = "0.1.0"
