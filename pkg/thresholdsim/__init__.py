"""Threshold detection of classical random signals: analytic laws and a Monte Carlo oracle."""

__version__ = "1.0.0"
