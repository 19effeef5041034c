"""Infection source estimation from partially observed SI spreads."""

__version__ = "0.1.0"
