"""Sandboxed executor for generated teaching-scene programs."""

__version__ = "0.1.0"
