"""Setlist identification: which catalog songs a live concert contains, and when."""

__version__ = "0.1.0"
