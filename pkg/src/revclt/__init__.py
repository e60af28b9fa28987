"""Exact and Monte Carlo verification of limit theorems for a reversible holding chain."""

__version__ = "0.1.0"
