"""Sim-to-real portfolio optimization laboratory."""

__version__ = "0.1.0"
