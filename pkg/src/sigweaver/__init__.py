"""Implicit-signal to explicit-signal monitor compiler and trace engine."""

__version__ = "0.1.0"
