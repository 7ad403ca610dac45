"""fracpat: forward simulation, geometry audit, and time-reversal inversion
for the 2D wave equation with Caputo fractional attenuation."""

__version__ = "0.1.0"
