"""Robust max-margin classification for linear models."""

__version__ = "0.1.0"
