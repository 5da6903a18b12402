"""Warm-start genetic programming for formulaic alpha factors."""

__version__ = "0.1.0"
