"""Forecasting of sequences with seasonal long-memory multiplicative increments."""

__version__ = "0.1.0"
