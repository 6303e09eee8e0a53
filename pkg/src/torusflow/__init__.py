"""Compressible Euler / Navier-Stokes on the torus with solenoidal transport noise."""

__version__ = "0.1.0"
