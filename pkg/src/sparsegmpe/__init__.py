"""Sparse ground-motion prediction equations from strong-motion flatfiles."""

__version__ = "0.1.0"
