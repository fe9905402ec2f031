"""Unfitted Q2/Q1 finite elements for incompressible flow around level-set
obstacles on Cartesian grids."""

__version__ = "0.1.0"
