"""IREE-driven network planning."""

__version__ = "0.1.0"
