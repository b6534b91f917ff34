"""Crouzeix-Raviart multiscale finite elements for penalized Stokes flow."""

__version__ = "0.1.0"
