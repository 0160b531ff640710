"""Discrete SAC on a simulated 6-DOF arm, with a TCP digital-twin link."""

__version__ = "0.1.0"
