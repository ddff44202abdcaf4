"""Batch off-policy policy gradient for sequence generation, in numpy."""

__version__ = "0.1.0"
