"""Hybrid behavioral models that fuse imagery with numeric travel data."""
__version__ = "0.1.0"
