"""Desk-scale autoregressive colorizer built on axial attention."""

__version__ = "0.1.0"
