"""Stacked difference-in-differences with shared control individuals."""

__version__ = "0.1.0"
