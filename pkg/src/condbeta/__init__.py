"""Conditional asymmetric beta estimation, forecasting and evaluation."""

__version__ = "0.1.0"
