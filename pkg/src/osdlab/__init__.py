"""Ordered statistics decoding laboratory."""

__version__ = "0.1.0"
