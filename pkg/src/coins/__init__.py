"""Recursive story completion with generated inference rules."""

__version__ = "0.1.0"
