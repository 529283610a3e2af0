"""Pulse-width-modulated model predictive control for LTV plants."""

__version__ = "0.1.0"
