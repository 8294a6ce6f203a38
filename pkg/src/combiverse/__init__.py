"""Compositional 3D asset assembly from a single multi-object image."""

__version__ = "0.1.0"
