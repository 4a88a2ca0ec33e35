"""Breathing-compensated 3D vessel reconstruction from tracked 2D sweeps."""

__version__ = "0.1.0"
