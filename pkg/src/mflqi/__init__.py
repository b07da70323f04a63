"""Matched-filter packet detection and link-quality estimation for IQ streams."""

__version__ = "0.1.0"
