"""Numerical laboratory for the diffusion coefficient of reverse-time samplers."""

__version__ = "0.1.0"
