"""Variational time integrators for lumped LCR circuits."""

__version__ = "0.1.0"
